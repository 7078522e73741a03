import csv
import io

import pytest

from fastnonlocal import cli


def run(*argv):
    buf = io.StringIO()
    code = cli.main(list(argv), out=buf)
    return code, buf.getvalue()


def parse(text):
    comments = [l for l in text.splitlines() if l.startswith("#")]
    body = [l for l in text.splitlines() if not l.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return comments, rows


def rates(comments):
    out = {}
    for c in comments:
        parts = c.split()
        if parts[:2] == ["#", "rate"]:
            out[parts[2]] = float(parts[3])
    return out


# --- split ------------------------------------------------------------------


def test_split_order_two():
    code, text = run("split", "--K", "2")
    assert code == 0
    comments, rows = parse(text)
    assert "# c0 = 15/8 = 1.875" in comments
    assert "# c1 = -5/4 = -1.25" in comments
    assert "# c2 = 3/8 = 0.375" in comments
    assert len(rows) == 101
    last = rows[-1]
    assert float(last["s"]) == 1.01 and float(last["kappa"]) == 0.0
    at_one = next(r for r in rows if float(r["s"]) == 1.0)
    assert float(at_one["kappa"]) == 0.0


def test_split_order_zero():
    code, text = run("split", "--K", "0")
    assert code == 0 and "# c0 = 1 = 1.0" in text


def test_split_bad_order_is_usage_error():
    assert run("split", "--K", "-1")[0] == 1


# --- apply / bench ------------------------------------------------------------


def test_apply_example_one():
    code, text = run("apply", "--dim", "2", "--n", "32", "--K", "0", "--delta0", "0.5")
    assert code == 0
    comments, rows = parse(text)
    assert comments[0].startswith("# config: ") and "seed=0" in comments[0]
    rec = rows[0]
    assert int(rec["N"]) == 1024 and int(rec["dense_ops"]) == 1024 ** 2
    assert float(rec["max_rel_err_vs_dense"]) <= 1e-12
    assert int(rec["fast_wall_ns"]) > 0 and int(rec["dense_wall_ns"]) > 0


def test_apply_example_two():
    code, text = run("apply", "--n", "2048", "--K", "3", "--horizon", "gaussian_bump",
                     "--delta0", "0.25")
    assert code == 0
    assert float(parse(text)[1][0]["max_rel_err_vs_dense"]) <= 1e-10


def test_apply_deterministic(tmp_path):
    args = ["apply", "--n", "256", "--K", "1", "--seed", "42", "--no-timing"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(*args, "--out", str(a))[0] == 0
    assert run(*args, "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert "seed=42" in a.read_text().splitlines()[0]


def test_apply_conformance_gate(monkeypatch):
    monkeypatch.setattr(cli, "CONFORMANCE_TOL", -1.0)
    assert run("apply", "--n", "64")[0] == 2


def test_bench_1d_rates():
    code, text = run("bench", "--K", "3", "--horizon", "gaussian_bump", "--delta0", "0.25",
                     "--sweep", "512,1024,2048,4096")
    assert code == 0
    comments, rows = parse(text)
    assert len(rows) == 4
    r = rates(comments)
    assert 1.0 <= r["step2+3_ops"] <= 1.2
    assert 1.8 <= r["dense_ops"] <= 2.2
    assert "fast_wall_ns" in r and "dense_wall_ns" in r


def test_bench_2d_rates():
    code, text = run("bench", "--dim", "2", "--K", "0", "--delta0", "0.5",
                     "--sweep", "8,16,32,64,128", "--no-timing")
    assert code == 0
    comments, rows = parse(text)
    assert all(float(r["max_rel_err_vs_dense"]) <= 1e-10 for r in rows)
    r = rates(comments)
    assert 1.35 <= r["step3_ops"] <= 1.65
    assert 1.8 <= r["dense_ops"] <= 2.2


def test_bench_needs_sweep():
    assert run("bench", "--sweep", "8,16")[0] == 1
    assert run("bench")[0] == 1


# --- rank profile -------------------------------------------------------------


def test_rank_profile_trend():
    code, text = run("rank-profile", "--n", "1024", "--delta0", "0.25", "--epsilon", "1e-8")
    assert code == 0
    comments, rows = parse(text)
    stored = [int(r["stored_floats"]) for r in rows]
    assert [int(r["regularity_k"]) for r in rows] == [-1, 0, 1, 2, 3]
    assert all(a >= b for a, b in zip(stored, stored[1:]))
    assert all(0 < float(r["ratio"]) <= 1.5 for r in rows)


def test_rank_profile_flat_for_large_horizon():
    code, text = run("rank-profile", "--n", "512", "--delta0", "1")
    stored = [int(r["stored_floats"]) for r in parse(text)[1]]
    assert code == 0 and (max(stored) - min(stored)) <= 0.05 * max(stored)


def test_rank_profile_mesh_horizon():
    code, text = run("rank-profile", "--n", "256", "--delta0", "h", "--regularities=-1,3")
    rows = parse(text)[1]
    assert code == 0 and float(rows[0]["delta"]) == 1 / 256 and len(rows) == 2


# --- solve --------------------------------------------------------------------


def test_solve_manufactured():
    code, text = run("solve", "--n", "512", "--K", "0", "--delta0", "0.25", "--tol", "1e-10")
    assert code == 0
    comments, rows = parse(text)
    err = float(next(c for c in comments if "error_vs_exact" in c).split()[-1])
    assert err <= 1e-8
    assert "# method cg" in comments and len(rows) == 512


def test_solve_zero_rhs():
    code, text = run("solve", "--n", "64", "--rhs", "constant", "--rhs-value", "0")
    comments, rows = parse(text)
    assert code == 0 and "# iterations 0" in comments
    assert all(float(r["u"]) == 0.0 for r in rows)


def test_solve_heterogeneous_uses_cgnr():
    code, text = run("solve", "--n", "256", "--horizon", "gaussian_bump")
    comments, _ = parse(text)
    assert code == 0 and "# method cgnr" in comments
    its = int(next(c for c in comments if c.startswith("# iterations")).split()[-1])
    assert its <= 10 * 256


def test_solve_rhs_file(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("\n".join(["1.0"] * 64))
    code, text = run("solve", "--n", "64", "--rhs", "file", "--rhs-file", str(f),
                     "--matvec", "dense")
    assert code == 0 and "# converged True" in text
    f.write_text("1.0 2.0")
    assert run("solve", "--n", "64", "--rhs", "file", "--rhs-file", str(f))[0] == 1


def test_solve_nonconvergence_exit_status():
    assert run("solve", "--n", "256", "--max-iter", "1")[0] == 2


# --- config and usage ---------------------------------------------------------


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# bench config\ndimension=2\nn=16\ndelta0=0.5\nsplit_K=0\nseed=3\n")
    code, text = run("apply", "--config", str(cfg))
    assert code == 0 and "dimension=2" in text and "N,recur_calls" in text
    code, text = run("apply", "--config", str(cfg), "--n", "8")
    assert code == 0 and int(parse(text)[1][0]["N"]) == 64


@pytest.mark.parametrize("argv", [
    ["apply", "--n", "100"],
    ["apply", "--dim", "4"],
    ["apply", "--delta0", "-1"],
    ["apply", "--bogus"],
    ["frobnicate"],
    [],
])
def test_usage_errors(argv, capsys):
    assert run(*argv)[0] == 1


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    assert run("apply", "--config", str(cfg))[0] == 1
    cfg.write_text("just words\n")
    assert run("apply", "--config", str(cfg))[0] == 1
    assert run("apply", "--config", str(tmp_path / "missing.cfg"))[0] == 1
