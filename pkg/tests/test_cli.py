import json

import numpy as np
import pytest

from r3loc import cli, io
from r3loc.geometry import PointCloud
from r3loc.pipeline import read_pose_list
from r3loc.registration import pose_error


def relocalise_args(sc, qid, *extra):
    return [
        "relocalise", "--db", str(sc.db), "--cloud", str(sc.root / "queries" / f"{qid}.r3pc"),
        "--image", str(sc.root / "queries" / f"{qid}.ppm"), "--calib", str(sc.calib), "--svc", str(sc.svc),
        "--config", str(sc.config), *extra,
    ]


def query_truth(sc, qid):
    for line in sc.query_lines():
        toks = line.split()
        if toks[0] == qid:
            return io.parse_transform(toks[3:10]), toks[10]
    raise KeyError(qid)


def parse_kv(text):
    return dict(line.split(": ", 1) for line in text.strip().splitlines() if ": " in line)


# -- build-db ---------------------------------------------------------------------------


def test_build_db_scenario_has_20_records(scenario, capsys):
    assert cli.main(["build-db", "--input", str(scenario.root / "map"), "--db", str(scenario.root / "db2"),
                     "--config", str(scenario.config)]) == 0
    assert parse_kv(capsys.readouterr().out)["records"] == "20"


def test_build_db_is_idempotent(scenario, tmp_path):
    args = ["build-db", "--input", str(scenario.root / "map"), "--config", str(scenario.config)]
    assert cli.main([*args, "--db", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--db", str(tmp_path / "a")]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "a").iterdir()}
    assert cli.main([*args, "--db", str(tmp_path / "b")]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "b").iterdir()}
    assert first.keys() == second.keys()
    for name in first:
        if name != "index.jsonl":  # holds absolute cloud paths
            assert first[name] == second[name], name


def test_build_db_empty_dir_warns(tmp_path, capsys, caplog):
    (tmp_path / "in").mkdir()
    assert cli.main(["build-db", "--input", str(tmp_path / "in"), "--db", str(tmp_path / "db")]) == 0
    assert "empty database" in caplog.text
    assert parse_kv(capsys.readouterr().out)["records"] == "0"


def test_build_db_corrupt_cloud_names_file(tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    io.write_cloud(src / "a.r3pc", PointCloud(np.random.default_rng(0).uniform(-5, 5, (500, 3))))
    (src / "b.r3pc").write_bytes(b"R3PC\x10\x00\x00\x00garbage")
    (src / "poses.txt").write_text("0 a.r3pc 1 0 0 0 0 0 0\n1 b.r3pc 1 0 0 0 0 0 0\n")
    assert cli.main(["build-db", "--input", str(src), "--db", str(tmp_path / "db")]) == 2
    err = capsys.readouterr().err
    assert "b.r3pc" in err and "a.r3pc" not in err


def test_build_db_missing_cloud_listed(tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    (src / "poses.txt").write_text("0 nope.r3pc 1 0 0 0 0 0 0\n")
    assert cli.main(["build-db", "--input", str(src), "--db", str(tmp_path / "db")]) == 2
    assert "nope.r3pc" in capsys.readouterr().err


# -- relocalise -------------------------------------------------------------------------


def test_relocalise_revisit_accepted_with_accurate_edge(scenario, capsys):
    assert cli.main(relocalise_args(scenario, "q00", "--query-node", "7")) == 0
    out = parse_kv(capsys.readouterr().out)
    assert out["verdict"] == "matched" and out["accepted"] == "true"
    src, dst, *pose = out["edge"].split()
    assert dst == "7"
    _, entries = read_pose_list(scenario.root / "map" / "poses.txt")
    root = {sid: p for sid, _, p in entries}[int(src)]
    truth, _ = query_truth(scenario, "q00")
    rot, trans = pose_error(io.parse_transform(pose), root.inverse().compose(truth))
    assert rot <= 0.5 and trans <= 0.05


@pytest.mark.parametrize("qid, verdict", [("q14", "mismatched"), ("q17", "unmatched")])
def test_relocalise_rejections_exit_1_without_edge(scenario, capsys, qid, verdict):
    assert query_truth(scenario, qid)[1] == verdict
    assert cli.main(relocalise_args(scenario, qid)) == 1
    text = capsys.readouterr().out
    assert parse_kv(text)["verdict"] == verdict
    assert "edge" not in parse_kv(text)


def test_relocalise_json_has_same_keys(scenario, capsys):
    cli.main(relocalise_args(scenario, "q01"))
    text_keys = list(parse_kv(capsys.readouterr().out))
    cli.main(relocalise_args(scenario, "q01", "--json"))
    body = json.loads(capsys.readouterr().out)
    assert list(body) == text_keys
    assert body["accepted"] is True


def test_relocalise_is_deterministic(scenario, capsys):
    outs = []
    for _ in range(2):
        cli.main(relocalise_args(scenario, "q02", "--json"))
        d = json.loads(capsys.readouterr().out)
        outs.append({k: v for k, v in d.items() if not k.startswith("time_")})
    assert outs[0] == outs[1]


def test_relocalise_timings_sum_to_total(scenario, capsys):
    cli.main(relocalise_args(scenario, "q03", "--json"))
    d = json.loads(capsys.readouterr().out)
    parts = sum(d[f"time_{s}"] for s in ("description", "localisation", "superpixel", "features", "mcs",
                                         "verification", "io"))
    assert all(v >= 0 for k, v in d.items() if k.startswith("time_"))
    assert parts == pytest.approx(d["time_total"], abs=5e-3)


def test_relocalise_empty_db_exits_2(scenario, tmp_path, capsys):
    (tmp_path / "in").mkdir()
    cli.main(["build-db", "--input", str(tmp_path / "in"), "--db", str(tmp_path / "db")])
    args = relocalise_args(scenario, "q00")
    args[args.index("--db") + 1] = str(tmp_path / "db")
    assert cli.main(args) == 2
    assert "empty" in capsys.readouterr().err.lower()


def test_relocalise_bad_config_exits_2(scenario, tmp_path, capsys):
    (tmp_path / "c.txt").write_text("registration.what = 1\n")
    args = relocalise_args(scenario, "q00")
    args[args.index("--config") + 1] = str(tmp_path / "c.txt")
    assert cli.main(args) == 2
    assert "registration.what" in capsys.readouterr().err


# -- train-svc --------------------------------------------------------------------------


def test_train_svc_reports_accuracy(scenario, tmp_path, capsys):
    assert cli.main(["train-svc", "--features", str(scenario.root / "train.csv"), "--out", str(tmp_path / "m")]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert float(out["training_accuracy"]) >= 0.95
    assert (tmp_path / "m").exists()


def test_train_svc_single_class_exits_2(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("mcs,nu,label\n0.9,0.9,matched\n0.8,0.85,matched\n")
    assert cli.main(["train-svc", "--features", str(tmp_path / "t.csv"), "--out", str(tmp_path / "m")]) == 2
    assert not (tmp_path / "m").exists()


def test_train_svc_two_class_toy_model_predicts(tmp_path):
    (tmp_path / "t.csv").write_text("mcs,nu,label\n0.9,0.9,matched\n0.8,0.85,matched\n0.1,0.1,unmatched\n0.2,0,unmatched\n")
    assert cli.main(["train-svc", "--features", str(tmp_path / "t.csv"), "--out", str(tmp_path / "m")]) == 0
    from r3loc.verification import SvcModel

    m = SvcModel.load(tmp_path / "m")
    assert m.predict_one(0.95, 0.95) == "matched" and m.predict_one(0.0, 0.0) == "unmatched"


# -- evaluate ---------------------------------------------------------------------------


def evaluate_subset(sc, tmp_path, ids, capsys):
    lines = [l for l in sc.query_lines() if l.split()[0] in ids]
    (sc.root / f"sub_{tmp_path.name}.txt").write_text("\n".join(lines) + "\n")
    code = cli.main(["evaluate", "--db", str(sc.db), "--queries", str(sc.root / f"sub_{tmp_path.name}.txt"),
                     "--calib", str(sc.calib), "--svc", str(sc.svc), "--config", str(sc.config), "--json",
                     "--csv-dir", str(tmp_path / "csv")])
    return code, json.loads(capsys.readouterr().out)


def test_evaluate_perfect_set(scenario, tmp_path, capsys):
    code, d = evaluate_subset(scenario, tmp_path, {f"q{i:02d}" for i in range(5)}, capsys)
    assert code == 0
    assert d["recall@1"] == 1.0 and d["success_rate"] == 1.0
    assert d["confusion_matched_as_matched"] == 5
    for name in ("recall.csv", "verification.csv", "runtime.csv"):
        assert (tmp_path / "csv" / name).exists()


def test_evaluate_three_of_ten_failures(scenario, tmp_path, capsys):
    # 7 clean revisits plus the 3 adversarially corrupted ones
    ids = {f"q{i:02d}" for i in range(7)} | {"q14", "q15", "q16"}
    code, d = evaluate_subset(scenario, tmp_path, ids, capsys)
    assert code == 0
    assert d["revisit_queries"] == 10
    assert d["success_rate"] == pytest.approx(0.7)
    assert d["confusion_mismatched_as_mismatched"] == 3


def test_evaluate_missing_ground_truth_exits_2(scenario, tmp_path, capsys):
    line = scenario.query_lines()[0].split()
    (tmp_path / "q.txt").write_text(" ".join(line[:3]) + "\n")
    code = cli.main(["evaluate", "--db", str(scenario.db), "--queries", str(tmp_path / "q.txt"),
                     "--calib", str(scenario.calib), "--svc", str(scenario.svc)])
    assert code == 2
    assert "ground truth" in capsys.readouterr().err


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for sub in ("build-db", "relocalise", "train-svc", "evaluate"):
        assert sub in out
