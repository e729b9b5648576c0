import pytest

from airalloc.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from airalloc.experiments import read_rows


def _train_cfg(tmp_path, out_name="run"):
    path = tmp_path / "train.yaml"
    path.write_text(
        "experiment: learning_rate\n"
        "seed: 5\n"
        f"output_dir: {tmp_path / out_name}\n"
        "multi_user:\n"
        "  n_users: 2\n"
        "  n_servers: 1\n"
        "train:\n"
        "  episodes: 2\n"
        "  steps_per_episode: 5\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli-train")
    cfg = _train_cfg(tmp_path)
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    return cfg, tmp_path / "run"


def test_solve_prints_allocation(capsys):
    assert main(["solve", "--servers", "1", "--task-mbits", "10"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "outage" in out
    assert "server 1:" in out
    assert "transmit power" in out
    assert "converged=True" in out


def test_solve_offload_only_keeps_local_share_zero(capsys):
    assert main(["solve", "--servers", "1", "--offload-only"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "local share     0.000000" in out


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["conquer"])
    assert exc.value.code == 2


def test_sweep_writes_csv(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "experiment: task_sweep\n"
        "seed: 0\n"
        f"output_dir: {tmp_path / 'out'}\n"
        "single_user:\n"
        "  n_servers: 1\n"
        "sweep:\n"
        "  values: [10.0]\n",
        encoding="utf-8",
    )
    assert main(["sweep", "--config", str(cfg)]) == EXIT_OK
    printed = capsys.readouterr().out.strip()
    assert printed.endswith("task_sweep.csv")
    assert read_rows(tmp_path / "out" / "task_sweep.csv")


def test_sweep_output_dir_override(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "experiment: task_sweep\n"
        "seed: 0\n"
        f"output_dir: {tmp_path / 'ignored'}\n"
        "single_user:\n"
        "  n_servers: 1\n"
        "sweep:\n"
        "  values: [10.0]\n",
        encoding="utf-8",
    )
    override = tmp_path / "elsewhere"
    assert main(["sweep", "--config", str(cfg), "--output-dir", str(override)]) == EXIT_OK
    assert (override / "task_sweep.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_sweep_missing_config_is_a_config_error(tmp_path, capsys):
    code = main(["sweep", "--config", str(tmp_path / "absent.yaml")])
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_sweep_unknown_key_is_a_config_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "experiment: task_sweep\nseed: 0\n"
        f"output_dir: {tmp_path}\nturbo: true\n",
        encoding="utf-8",
    )
    assert main(["sweep", "--config", str(cfg)]) == EXIT_CONFIG
    assert "unknown key" in capsys.readouterr().err


def test_train_writes_checkpoint_and_curve(trained, capsys):
    _, out_dir = trained
    assert (out_dir / "policy.ckpt").exists()
    rows = read_rows(out_dir / "training_curve.csv")
    assert len(rows) == 2
    assert all(r.tag == "train" for r in rows)


def test_eval_reports_policy_and_schedulers(trained, capsys):
    cfg, out_dir = trained
    code = main([
        "eval", "--config", str(cfg), "--checkpoint", str(out_dir / "policy.ckpt"),
        "--episodes", "2", "--steps", "3",
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "greedy" in out and "mean_success" in out
    for kind in ("round_robin", "weighted", "max_min", "proportional"):
        assert kind in out


def test_eval_rejects_grid_size_mismatch(trained, tmp_path, capsys):
    _, out_dir = trained
    cfg = tmp_path / "finer.yaml"
    cfg.write_text(
        "experiment: learning_rate\n"
        "seed: 5\n"
        f"output_dir: {tmp_path}\n"
        "multi_user:\n"
        "  n_users: 2\n"
        "  n_servers: 1\n"
        "train:\n"
        "  granularity: 0.25\n",
        encoding="utf-8",
    )
    code = main([
        "eval", "--config", str(cfg), "--checkpoint", str(out_dir / "policy.ckpt"),
        "--episodes", "1", "--steps", "1",
    ])
    assert code == EXIT_CONFIG
    assert "grid" in capsys.readouterr().err


def test_eval_missing_checkpoint_is_a_runtime_error(trained, tmp_path, capsys):
    cfg, _ = trained
    code = main([
        "eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "ghost.ckpt"),
        "--episodes", "1", "--steps", "1",
    ])
    assert code == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_bench_writes_latency_table(tmp_path, capsys):
    code = main([
        "bench", "--servers", "1", "--repetitions", "1",
        "--output-dir", str(tmp_path),
    ])
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "latency.csv")
    assert {r.tag for r in rows} == {"bcd_mm1", "bcd_mm2", "gradient_descent", "dqn_inference"}
    assert all(r.value > 0.0 for r in rows)
