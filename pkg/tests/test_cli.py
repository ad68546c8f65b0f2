import json

import pandas as pd
import pytest

from commands.bench_command import BENCH_COLUMNS, STAGE_COLUMNS
from commands.stream_command import STREAM_COLUMNS
from main import main
from networks import CHECKIN_FILE, load_networks, write_networks
from snapshot import BOUNDS_SNAPSHOT, INDEX_SNAPSHOT

from conftest import clique_networks, clique_params, tiny_query

GEN_ARGS = [
    "--seed", "3",
    "--users", "12",
    "--degree-min", "2",
    "--degree-max", "4",
    "--road-vertices", "20",
    "--pois", "8",
    "--dictionary", "6",
]


def generate(directory, *extra):
    assert main(["gen", "--out", str(directory), *GEN_ARGS, *extra]) == 0


def prepare(directory):
    generate(directory)
    assert main(["precompute", "--data-dir", str(directory), "--social-pivots", "3", "--road-pivots", "3"]) == 0
    assert main(["build-index", "--data-dir", str(directory), "--fanout", "2", "--leaf-capacity", "4"]) == 0


def query_args(directory, seed=0):
    params = tiny_query(load_networks(str(directory)), seed)
    return [
        "--data-dir", str(directory),
        "--q", params.q,
        "--keywords", ",".join(params.keywords),
        "--d", str(params.d),
        "--omega", str(params.omega),
        "--pi", str(params.pi),
        "--theta", str(params.theta),
        "--sigma", str(params.sigma),
    ]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("dataset")
    prepare(directory)
    return directory


@pytest.fixture(scope="module")
def clique_dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("clique")
    write_networks(str(directory), clique_networks())
    assert main(["precompute", "--data-dir", str(directory), "--social-pivots", "2", "--road-pivots", "2"]) == 0
    assert main(["build-index", "--data-dir", str(directory), "--fanout", "2", "--leaf-capacity", "3"]) == 0
    return directory


class TestPipeline:
    def test_snapshots_written(self, dataset):
        assert (dataset / BOUNDS_SNAPSHOT).exists()
        assert (dataset / INDEX_SNAPSHOT).exists()
        manifest = json.loads((dataset / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["config"]["users"] == 12

    @pytest.mark.parametrize("seed", range(3))
    def test_query_matches_oracle(self, dataset, tmp_path, seed):
        args = query_args(dataset, seed)
        engine_out, oracle_out = tmp_path / "engine.json", tmp_path / "oracle.json"
        assert main(["query", *args, "--sound-only", "--output", str(engine_out)]) == 0
        assert main(["oracle", *args, "--output", str(oracle_out)]) == 0
        engine = json.loads(engine_out.read_text(encoding="utf-8"))
        oracle = json.loads(oracle_out.read_text(encoding="utf-8"))
        assert engine["users"] == oracle["users"]
        assert engine["pois"] == oracle["pois"]
        assert engine["verification"]["valid"] is True

    def test_clique_community_end_to_end(self, clique_dataset, tmp_path):
        params = clique_params()
        args = [
            "--data-dir", str(clique_dataset),
            "--q", params.q,
            "--keywords", ",".join(params.keywords),
            "--k", str(params.k),
            "--d", str(params.d),
            "--omega", str(params.omega),
            "--pi", str(params.pi),
            "--theta", str(params.theta),
            "--sigma", str(params.sigma),
        ]
        engine_out, oracle_out = tmp_path / "engine.json", tmp_path / "oracle.json"
        assert main(["query", *args, "--sound-only", "--output", str(engine_out)]) == 0
        assert main(["oracle", *args, "--output", str(oracle_out)]) == 0
        engine = json.loads(engine_out.read_text(encoding="utf-8"))
        oracle = json.loads(oracle_out.read_text(encoding="utf-8"))
        assert engine["users"] == oracle["users"] == ["a", "b", "c", "d"]
        assert engine["pois"] == oracle["pois"] == ["p0", "p1"]
        assert engine["verification"]["valid"] is True
        assert engine["verification"]["empty"] is False
        assert engine["verification"]["keyword_core"] is True

    def test_query_prints_document(self, dataset, capsys):
        assert main(["query", *query_args(dataset)]) == 0
        document = json.loads(capsys.readouterr().out)
        assert {"users", "pois", "edges", "stats"} <= set(document)


class TestExitCodes:
    def test_invalid_k(self, dataset):
        assert main(["query", *query_args(dataset), "--k", "2"]) == 2

    def test_unknown_lemma(self, dataset):
        assert main(["query", *query_args(dataset), "--disable-lemmas", "Bogus"]) == 2

    def test_missing_snapshot(self, tmp_path):
        generate(tmp_path)
        assert main(["query", *query_args(tmp_path)]) == 2

    def test_dataset_changed_after_precompute(self, tmp_path):
        generate(tmp_path)
        assert main(["precompute", "--data-dir", str(tmp_path), "--social-pivots", "2", "--road-pivots", "2"]) == 0
        with open(tmp_path / CHECKIN_FILE, "a", encoding="utf-8") as handle:
            handle.write("# edited\n")
        assert main(["build-index", "--data-dir", str(tmp_path)]) == 3

    def test_stream_needs_visits(self, dataset):
        assert main(["stream", "--data-dir", str(dataset)]) == 2


class TestStream:
    def test_stream_writes_batches(self, tmp_path):
        data = tmp_path / "data"
        generate(data, "--horizon", "60", "--tau", "20")
        output = tmp_path / "stream.csv"
        code = main(
            [
                "stream",
                "--data-dir", str(data),
                "--batch-size", "20",
                "--register", "2",
                "--individual",
                "--output", str(output),
            ]
        )
        assert code == 0
        frame = pd.read_csv(output)
        assert list(frame.columns) == STREAM_COLUMNS
        assert len(frame) > 0
        assert set(frame["op"]) <= {"insertion", "deletion"}
        assert (frame["t"].diff().dropna() >= 0).all()


class TestBench:
    def test_k_sweep_with_invalid_point(self, dataset, tmp_path):
        output = tmp_path / "bench" / "k.csv"
        code = main(
            [
                "bench",
                "--sweep", "k",
                "--values", "2,3",
                "--queries", "3",
                "--data-dir", str(dataset),
                "--output", str(output),
            ]
        )
        assert code == 0
        frame = pd.read_csv(output)
        assert list(frame.columns) == BENCH_COLUMNS
        assert len(frame) == 6
        assert (frame[frame["value"] == 2]["status"] == "skipped").all()
        assert (frame[frame["value"] == 3]["status"] == "ok").all()

        staging = pd.read_csv(tmp_path / "bench" / "k_staging.csv")
        assert list(staging.columns) == STAGE_COLUMNS
        assert len(staging) == 3 * 8
        for _, group in staging.groupby("query"):
            surviving = group.sort_values("stage")["surviving"].tolist()
            assert surviving == sorted(surviving, reverse=True)

    def test_sweep_needs_dataset(self, tmp_path):
        assert main(["bench", "--sweep", "sigma", "--values", "5", "--output", str(tmp_path / "x.csv")]) == 2
