"""Tests for the experiment command line."""

import subprocess
import sys

import numpy as np
import pytest

from batchcast import cli, codec

BASE = {
    "num_users": "3",
    "loss_common": "0.05",
    "loss_source": "0.5",
    "loss_peer": "0.1",
    "batch_size": "8",
    "file_packets": "300",
}


def write_cfg(tmp_path, extra=None, drop=()):
    lines = ["# test network", ""]
    data = dict(BASE)
    if extra:
        data.update(extra)
    for key in drop:
        data.pop(key, None)
    lines += ["%s=%s" % (k, v) for k, v in data.items()]
    path = tmp_path / "net.cfg"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run_cli(args):
    return cli.main(args)


# ------------------------------------------------------------------ plan


def test_plan_headline_and_csv(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert run_cli(["plan", "--config", cfg, "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert "n_l=52 n_u=83 n*=62" in text
    body = (out / "plan.csv").read_text()
    lines = body.splitlines()
    assert lines[0].startswith("# mode=plan")
    assert lines[1] == "n,T,total"
    first = lines[2].split(",")
    assert [int(v) for v in first] == [52, 264, 680]
    # planning is deterministic: a second invocation rewrites the same bytes
    assert run_cli(["plan", "--config", cfg, "--out-dir", str(out)]) == 0
    assert (out / "plan.csv").read_text() == body


# -------------------------------------------------------------- simulate


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    args = [
        "simulate",
        "--config",
        cfg,
        "--out-dir",
        str(out),
        "--runs",
        "2",
        "--n",
        "64",
    ]
    assert run_cli(args) == 0
    sim_body = (out / "simulate.csv").read_text()
    rank_body = (out / "rank_distribution.csv").read_text()

    lines = sim_body.splitlines()
    assert lines[0].startswith("# mode=simulate")
    assert lines[1].split(",")[:3] == ["seed", "status", "phase1_tx"]
    data = [ln.split(",") for ln in lines[2:]]
    assert [row[0] for row in data] == ["0", "1", "mean", "sd"]
    assert all(row[1] == "ok" for row in data)
    for row in data[:2]:
        assert int(row[2]) == 64 * 8
        assert int(row[4]) == int(row[2]) + int(row[3])

    rlines = rank_body.splitlines()
    assert rlines[1] == "rank,empirical,exact_model,normal_approx"
    table = np.array([[float(v) for v in ln.split(",")] for ln in rlines[2:]])
    assert table.shape == (9, 4)
    # columns are rounded to 6 decimals in the file
    assert abs(table[:, 1].sum() - 1.0) < 1e-5
    assert abs(table[:, 2].sum() - 1.0) < 1e-5

    # identical seeds and config reproduce identical files
    assert run_cli(args) == 0
    assert (out / "simulate.csv").read_text() == sim_body
    assert (out / "rank_distribution.csv").read_text() == rank_body


def test_simulate_writes_traces_on_request(tmp_path):
    cfg = write_cfg(tmp_path, extra={"write_trace": "1", "n": "64"})
    out = tmp_path / "out"
    assert run_cli(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    trace = (out / "trace_0.csv").read_text()
    lines = trace.splitlines()
    assert lines[1].startswith("slot,sender,batch_id,delivered_u0")
    assert len(lines) > 2


def test_simulate_accepts_degree_file(tmp_path):
    dist_path = tmp_path / "degrees.txt"
    codec.default_distribution(8).to_file(str(dist_path))
    cfg = write_cfg(tmp_path, extra={"dist_path": str(dist_path), "n": "80"})
    out = tmp_path / "out"
    assert run_cli(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    assert (out / "simulate.csv").exists()


def test_simulate_bad_degree_file(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra={"dist_path": str(tmp_path / "nope.txt")})
    rc = run_cli(["simulate", "--config", cfg, "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error: bad_value field=dist_path" in capsys.readouterr().err


def test_simulate_records_stalled_seeds(tmp_path):
    # 20 batches of 8 cannot reach rank 300: every seed stalls, the run
    # still exits cleanly with each failure recorded.
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = run_cli(
        [
            "simulate",
            "--config",
            cfg,
            "--out-dir",
            str(out),
            "--runs",
            "2",
            "--n",
            "20",
        ]
    )
    assert rc == 0
    lines = (out / "simulate.csv").read_text().splitlines()
    data = [ln.split(",") for ln in lines[2:]]
    assert len(data) == 2
    assert all(row[1] == "stalled" for row in data)


# ----------------------------------------------------------------- sweep


def test_sweep_csv(tmp_path):
    cfg = write_cfg(tmp_path, drop=("num_users",))
    out = tmp_path / "out"
    rc = run_cli(
        [
            "sweep",
            "--config",
            cfg,
            "--out-dir",
            str(out),
            "--set",
            "users_min=2",
            "--set",
            "users_max=3",
        ]
    )
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1] == (
        "num_users,single_phase,two_phase,saving,loss_common,loss_source,loss_peer"
    )
    rows = [ln.split(",") for ln in lines[2:]]
    assert [int(r[0]) for r in rows] == [2, 3]
    for r in rows:
        assert float(r[3]) == pytest.approx(float(r[1]) - float(r[2]), abs=0.11)


# ------------------------------------------------------------ robustness


def test_robustness_csv(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra={"actual_users": "5"})
    out = tmp_path / "out"
    assert run_cli(["robustness", "--config", cfg, "--out-dir", str(out)]) == 0
    assert "degradation_pct=" in capsys.readouterr().out
    lines = (out / "robustness.csv").read_text().splitlines()
    assert lines[1] == "seed,design_users,actual_users,robust_total,ideal_total"
    row = lines[2].split(",")
    assert row[1] == "3" and row[2] == "5"
    assert lines[-1].startswith("mean,")


def test_robustness_rejects_smaller_group(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra={"actual_users": "2"})
    rc = run_cli(["robustness", "--config", cfg, "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error: bad_value" in capsys.readouterr().err


# ---------------------------------------------------------- single-phase


def test_single_phase_csv(tmp_path):
    cfg = write_cfg(tmp_path, drop=("loss_peer", "batch_size"))
    out = tmp_path / "out"
    rc = run_cli(
        ["single-phase", "--config", cfg, "--out-dir", str(out), "--runs", "3"]
    )
    assert rc == 0
    lines = (out / "single_phase.csv").read_text().splitlines()
    assert lines[1] == "seed,transmissions"
    assert len(lines) == 2 + 3 + 2  # comment, header, 3 seeds, mean, sd
    assert lines[-2].startswith("mean,")
    assert lines[-1].startswith("sd,")
    vals = [int(ln.split(",")[1]) for ln in lines[2:5]]
    assert all(v >= 303 for v in vals)


# ---------------------------------------------------------------- config


def test_missing_field_is_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path, drop=("loss_peer",))
    rc = run_cli(["simulate", "--config", cfg])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error: missing_field field=loss_peer mode=simulate" in err


def test_mode_required(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run_cli(["--config", cfg]) == 2
    assert "error: missing_field field=mode" in capsys.readouterr().err


def test_mode_from_config_file(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra={"mode": "plan"})
    out = tmp_path / "out"
    assert run_cli(["--config", cfg, "--out-dir", str(out)]) == 0
    assert "n_l=" in capsys.readouterr().out


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = run_cli(["plan", "--config", cfg, "--set", "bogus=1"])
    assert rc == 2
    assert "error: unknown_key key=bogus" in capsys.readouterr().err


def test_bad_value_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = run_cli(["plan", "--config", cfg, "--set", "num_users=abc"])
    assert rc == 2
    assert "error: bad_value field=num_users value=abc" in capsys.readouterr().err


def test_runs_must_be_positive(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = run_cli(["plan", "--config", cfg, "--runs", "0"])
    assert rc == 2
    assert "error: bad_value field=runs" in capsys.readouterr().err


def test_sweep_range_validated(tmp_path, capsys):
    cfg = write_cfg(tmp_path, drop=("num_users",))
    rc = run_cli(
        [
            "sweep",
            "--config",
            cfg,
            "--set",
            "users_min=5",
            "--set",
            "users_max=3",
        ]
    )
    assert rc == 2
    assert "error: bad_value field=users_min" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    rc = run_cli(["plan", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 2
    assert "error: bad_config" in capsys.readouterr().err


def test_malformed_config_line(tmp_path, capsys):
    path = tmp_path / "broken.cfg"
    path.write_text("num_users=3\nthis is not a pair\n")
    rc = run_cli(["plan", "--config", str(path)])
    assert rc == 2
    assert "detail=not_key_value" in capsys.readouterr().err


def test_bad_set_argument(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = run_cli(["plan", "--config", cfg, "--set", "oops"])
    assert rc == 2
    assert "error: bad_value field=--set" in capsys.readouterr().err


def test_invalid_network_values_surface_as_config_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra={"loss_source": "2.0"})
    rc = run_cli(["plan", "--config", cfg, "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error: bad_value" in capsys.readouterr().err


def test_flag_overrides_config_seed(tmp_path):
    cfg = write_cfg(tmp_path, extra={"seed": "0", "n": "64"})
    out = tmp_path / "out"
    rc = run_cli(
        ["simulate", "--config", cfg, "--out-dir", str(out), "--seed", "5"]
    )
    assert rc == 0
    lines = (out / "simulate.csv").read_text().splitlines()
    assert lines[2].split(",")[0] == "5"


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "batchcast.cli",
            "plan",
            "--config",
            cfg,
            "--out-dir",
            str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "n_l=52 n_u=83 n*=62" in proc.stdout
    bad = subprocess.run(
        [sys.executable, "-m", "batchcast.cli", "simulate"],
        capture_output=True,
        text=True,
    )
    assert bad.returncode == 2
    assert bad.stderr.startswith("error: missing_field")
