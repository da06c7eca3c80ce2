import json

import pytest

from ocgvf.cli import EXIT_CONFIG, main

TINY = ["--set", "train_episodes=2", "--set", "max_steps=5", "--set", "warm_start=4", "--set", "batch_size=2",
        "--set", "evaluate_every=1", "--set", "eval_episodes=1", "--set", "sa_batch_size=2",
        "--set", "replay_capacity=100", "--set", "unroll_steps=2"]


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("fig2a", "fig3a", "fig4-hard", "appC4"):
        assert name in out


def test_dry_run_fig2a(tmp_path, capsys):
    assert main(["run", "--preset", "fig2a", "--seed", "0", "--out", str(tmp_path), "--dry-run"]) == 0
    out = capsys.readouterr().out
    for algo in ("ddqn", "random_gvf", "hc_gvf", "dis_aux_gvf", "oc_gvf"):
        assert f"algo={algo} seed=0" in out
    assert "co_stationary" in out
    assert not any(tmp_path.iterdir())


def test_unknown_algo_lists_variants(capsys):
    assert main(["run", "--algo", "a3c", "--dry-run"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "a3c" in err and "oc_gvf" in err and "dis_aux_gvf" in err


def test_malformed_config_reports_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("batch_size: lots\n")
    assert main(["run", "--config", str(cfg), "--dry-run"]) == EXIT_CONFIG
    assert "batch_size" in capsys.readouterr().err
    assert main(["run", "--set", "nonsense", "--dry-run"]) == EXIT_CONFIG
    assert main(["run", "--preset", "fig2a", "--algo", "ddqn", "--dry-run"]) == EXIT_CONFIG


def test_run_plot_slots_heatmap(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", "--algo", "oc_gvf", "--seed", "0", "--seed", "1", "--out", str(out)] + TINY) == 0
    run_dir = out / "collect_objects" / "oc_gvf" / "seed_0"
    assert len((run_dir / "log.jsonl").read_text().splitlines()) == 2
    assert (out / "collect_objects" / "oc_gvf" / "seed_1" / "log.jsonl").exists()

    assert main(["plot", str(out), "--out", str(tmp_path / "curve.png")]) == 0
    assert (tmp_path / "curve.png").exists() and (tmp_path / "curve.csv").exists()

    ckpt = str(run_dir / "checkpoints" / "latest.pt")
    assert main(["slots", "--checkpoint", ckpt, "--out", str(tmp_path / "slots.png"), "--count", "2"]) == 0
    assert "2 rows x 7 panels" in capsys.readouterr().out
    assert main(["heatmap", "--checkpoint", ckpt, "--out", str(tmp_path / "heat.png")]) == 0
    assert (tmp_path / "heat.npy").exists()


def test_resume_flag_continues(tmp_path):
    out = tmp_path / "runs"
    args = ["run", "--algo", "ddqn", "--seed", "0", "--out", str(out)] + TINY
    assert main(args + ["--set", "checkpoint_every=1"]) == 0
    log = out / "collect_objects" / "ddqn" / "seed_0" / "log.jsonl"
    before = log.read_bytes()
    assert main(args + ["--set", "checkpoint_every=1", "--resume"]) == 0
    assert log.read_bytes() == before  # already finished: nothing appended


def test_plot_empty_dir_errors(tmp_path):
    assert main(["plot", str(tmp_path), "--out", str(tmp_path / "x.png")]) == EXIT_CONFIG


def test_check_subcommand(tmp_path, capsys):
    assert main(["check", "--only", "mstde", "ddqn", "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["passed"] and len(report["checks"]) == 2
    assert "PASS mstde_oracle" in capsys.readouterr().out


def test_help_exits_cleanly():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
