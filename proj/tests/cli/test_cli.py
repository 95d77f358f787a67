import json
import os
import subprocess
from pathlib import Path

import pytest

BIN = os.environ.get("ENTRAIN_BIN", str(Path(__file__).resolve().parents[2] / "build" / "entrain"))
FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

SUBCOMMANDS = ["synth", "ingest", "featurize", "train", "score", "shuffle-test", "correlate",
               "gradcheck", "rerun"]
QUICK = ["--max-epochs", "2", "--batch-size", "16"]


def run(*args, cwd=None, check=True):
    proc = subprocess.run([BIN, *map(str, args)], cwd=cwd, capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}: {proc.stderr}")
    return proc


def rerun_report(proc):
    # The re-executed command's own summary lines precede the JSON report.
    lines = proc.stdout.splitlines()
    return json.loads("\n".join(lines[lines.index("{"):]))


def rerun_ok(manifest, cwd):
    proc = run("rerun", "--manifest", manifest, cwd=cwd, check=False)
    report = rerun_report(proc)
    assert proc.returncode == 0, proc.stderr
    assert report["reproduced"] is True
    assert all(report["files"].values())
    return report


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    run("synth", "--out", "corpus.jsonl", "--annotations-out", "ann.csv", "--truth-out", "truth.csv",
        "--summary-out", "synth.json", "--sessions", "30", "--turns", "9", "--feature-dim", "6",
        "--lambda-spread", "0.5", "--seed", "3", cwd=d)
    return d


def test_help_lists_subcommands_and_flags():
    top = run("--help").stdout
    for name in SUBCOMMANDS:
        assert name in top
    expected = {
        "synth": ["--out", "--sessions", "--turns", "--feature-dim", "--latent-dim", "--consistency",
                  "--entrainment", "--noise", "--lambda-spread", "--seed", "--config", "--manifest"],
        "train": ["--corpus", "--measure", "--out", "--log", "--seed", "--batch-size", "--max-epochs",
                  "--patience", "--lr", "--grl-lambda", "--config"],
        "shuffle-test": ["--corpus", "--measure", "--out-dir", "--runs", "--seeds", "--parallel"],
        "correlate": ["--corpus", "--annotations", "--eval-corpus", "--runs", "--level"],
        "score": ["--model", "--corpus", "--out", "--split"],
        "gradcheck": ["--out", "--tolerance", "--samples"],
        "rerun": ["--manifest"],
    }
    for name, flags in expected.items():
        text = run(name, "--help").stdout
        for flag in flags:
            assert flag in text, f"{name} --help lacks {flag}"


def test_version():
    assert run("--version").stdout.strip()


def test_missing_corpus_names_the_path(tmp_path):
    missing = tmp_path / "nowhere" / "corpus.jsonl"
    proc = run("train", "--corpus", missing, "--out", tmp_path / "m.json", check=False)
    assert proc.returncode != 0
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["status"] == "error"
    assert str(missing) in err["error"]


def test_usage_errors_exit_2(tmp_path):
    proc = run("train", "--out", tmp_path / "m.json", check=False)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["kind"] == "usage"
    assert run("train", "--no-such-flag", check=False).returncode == 2
    assert run(check=False).returncode == 2


def test_malformed_corpus_reports_line(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"session_id": "s", "task_id": null, "speaker": "A", "index": 0, "features": [1]}\n{oops\n')
    proc = run("ingest", "--corpus", bad, "--out", tmp_path / "i.json", check=False)
    assert proc.returncode == 1
    assert "line 2" in proc.stderr
    assert str(bad) in proc.stderr


def test_synth_outputs(workdir):
    summary = json.loads((workdir / "synth.json").read_text())
    assert summary
    lines = (workdir / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 30 * 9 * 2
    assert (workdir / "ann.csv").read_text().startswith("session_id,task_id,speaker,variable,count")
    rerun_ok("corpus.jsonl.manifest.json", workdir)


def test_ingest_reports_samples(workdir):
    run("ingest", "--corpus", "corpus.jsonl", "--out", "ingest.json", cwd=workdir)
    report = json.loads((workdir / "ingest.json").read_text())
    assert report["excluded_exchanges"] == 30
    assert all(s["samples"] == 7 for s in report["per_session"])
    rerun_ok("ingest.json.manifest.json", workdir)


def test_train_score_rerun(workdir):
    for measure in ("dr", "adv"):
        run("train", "--corpus", "corpus.jsonl", "--measure", measure, "--out", f"{measure}.json",
            "--log", f"{measure}.csv", "--seed", "4", *QUICK, cwd=workdir)
        model = json.loads((workdir / f"{measure}.json").read_text())
        assert model["measure"] == measure
        assert (workdir / f"{measure}.csv").read_text().startswith("stage,epoch,train_loss,val_loss,best")
        rerun_ok(f"{measure}.json.manifest.json", workdir)

        run("score", "--model", f"{measure}.json", "--corpus", "corpus.jsonl", "--out",
            f"{measure}_scores.csv", cwd=workdir)
        rows = (workdir / f"{measure}_scores.csv").read_text().splitlines()
        assert len(rows) == 1 + 3 * 7
        rerun_ok(f"{measure}_scores.csv.manifest.json", workdir)


def test_rerun_detects_mismatch(workdir):
    run("train", "--corpus", "corpus.jsonl", "--out", "tamper.json", "--seed", "1", *QUICK, cwd=workdir)
    manifest = json.loads((workdir / "tamper.json.manifest.json").read_text())
    manifest["outputs"]["tamper.json"] = "0" * 64
    (workdir / "tampered.manifest.json").write_text(json.dumps(manifest))
    proc = run("rerun", "--manifest", "tampered.manifest.json", cwd=workdir, check=False)
    assert proc.returncode == 1
    assert rerun_report(proc)["reproduced"] is False


def test_rerun_refuses_changed_inputs(workdir, tmp_path):
    corpus = tmp_path / "c.jsonl"
    corpus.write_text((workdir / "corpus.jsonl").read_text())
    run("ingest", "--corpus", corpus, "--out", tmp_path / "i.json")
    with corpus.open("a") as f:
        f.write("\n")
    proc = run("rerun", "--manifest", tmp_path / "i.json.manifest.json", check=False)
    assert proc.returncode == 1
    assert "changed" in proc.stderr


def test_shuffle_test_outputs(workdir):
    run("shuffle-test", "--corpus", "corpus.jsonl", "--measure", "adv", "--runs", "2", "--seeds", "7",
        "--out-dir", "shuffle", *QUICK, cwd=workdir)
    summary = json.loads((workdir / "shuffle" / "summary.json").read_text())
    assert summary["measure"] == "adv"
    assert summary["runs"] == 2
    assert summary["seeds"] == [7, 8]
    assert 0.0 <= summary["accuracy_mean"] <= 1.0
    assert "per_variable" in summary
    sessions = (workdir / "shuffle" / "sessions.csv").read_text().splitlines()
    assert len(sessions) == 1 + 2 * 3
    rerun_ok("shuffle/manifest.json", workdir)


def test_correlate_outputs(workdir):
    run("correlate", "--corpus", "corpus.jsonl", "--annotations", "ann.csv", "--runs", "3",
        "--out-dir", "corr", *QUICK, cwd=workdir)
    summary = json.loads((workdir / "corr" / "summary.json").read_text())
    assert set(summary["per_variable"]) == {"enc", "lik", "dom"}
    for v in summary["per_variable"].values():
        assert len(v["r_distribution"]) == 3
        assert all(-1.0 <= r <= 1.0 for r in v["r_distribution"])
    rows = (workdir / "corr" / "runs.csv").read_text().splitlines()
    assert rows[0].startswith("run,seed,variable,r,p,n")
    assert len(rows) == 1 + 3 * 3
    rerun_ok("corr/manifest.json", workdir)


def test_config_file_with_flag_override(workdir):
    (workdir / "train.cfg").write_text("# quick run\nmax-epochs = 1\nbatch_size=16\nseed = 9\n")
    run("train", "--corpus", "corpus.jsonl", "--out", "cfg.json", "--config", "train.cfg", "--seed", "2",
        cwd=workdir)
    cfg = json.loads((workdir / "cfg.json.manifest.json").read_text())["config"]
    assert cfg["seed"] == 2
    assert cfg["train"]["max_epochs"] == 1
    assert cfg["train"]["batch_size"] == 16
    rerun_ok("cfg.json.manifest.json", workdir)

    (workdir / "bad.cfg").write_text("epochs = 3\n")
    proc = run("train", "--corpus", "corpus.jsonl", "--out", "x.json", "--config", "bad.cfg", cwd=workdir,
               check=False)
    assert proc.returncode == 1
    assert "unknown option" in proc.stderr


def test_featurize_fixture_matches_reference(tmp_path):
    out = tmp_path / "features.jsonl"
    run("featurize", "--corpus", FIXTURES / "lld_session.jsonl", "--out", out)
    expected = json.loads((FIXTURES / "lld_expected.json").read_text())
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert sorted(str(r["index"]) for r in rows) == sorted(expected)
    for row in rows:
        ref = expected[str(row["index"])]
        assert len(row["features"]) == 228
        assert max(abs(a - b) for a, b in zip(row["features"], ref)) < 1e-12
    rerun_ok(out.name + ".manifest.json", tmp_path)


def test_gradcheck_report(tmp_path):
    run("gradcheck", "--out", tmp_path / "gc.json", "--samples", "2")
    report = json.loads((tmp_path / "gc.json").read_text())
    assert report["passed"] is True
    assert all(c["max_rel_error"] < 1e-4 for c in report["checks"])
