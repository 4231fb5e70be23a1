import json

import numpy as np

from hsmm_spectral.cli import main
from hsmm_spectral.hsmm import load_model, read_sequences


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_model_then_validate(tmp_path, capsys):
    model = tmp_path / "m.json"
    code, _, _ = run(
        ["gen-model", "--no", "3", "--nx", "2", "--nd", "2", "--seed", "1",
         "-o", str(model)], capsys
    )
    assert code == 0
    code, out, _ = run(["validate", str(model)], capsys)
    assert code == 0
    assert "pass" in out
    p = load_model(model)
    assert (p.n_o, p.n_x, p.n_d) == (3, 2, 2)


def test_usage_error_exits_one(capsys):
    code, _, err = run(["gen-model", "--no", "3"], capsys)
    assert code == 1
    code, _, _ = run(["frobnicate"], capsys)
    assert code == 1
    code, _, _ = run(["bench", "--bogus-flag"], capsys)
    assert code == 1


def test_missing_file_exits_two(capsys):
    code, _, err = run(["validate", "does-not-exist.json"], capsys)
    assert code == 2


def test_full_pipeline(tmp_path, capsys):
    model = tmp_path / "m.json"
    data = tmp_path / "train.txt"
    learned = tmp_path / "spec.bin"
    scores = tmp_path / "scores.csv"
    moments = tmp_path / "moments.bin"
    assert run(
        ["gen-model", "--no", "3", "--nx", "2", "--nd", "2", "--seed", "2",
         "-o", str(model)], capsys
    )[0] == 0
    assert run(
        ["gen-data", "--model", str(model), "-n", "400", "-T", "20",
         "--seed", "3", "-o", str(data)], capsys
    )[0] == 0
    assert len(read_sequences(data)) == 400
    assert run(
        ["learn-spectral", "--data", str(data), "--nx", "2", "--nd", "2",
         "--rtol", "1e-6", "--save-moments", str(moments), "-o", str(learned)],
        capsys,
    )[0] == 0
    code, out, _ = run(
        ["infer", "--model", str(learned), "--sequence", "0 1 2 1 0"], capsys
    )
    assert code == 0
    assert "log_value=" in out and "sign=1" in out
    code, out, _ = run(
        ["score", "--model", str(learned), "--data", str(data),
         "-o", str(scores)], capsys
    )
    assert code == 0
    lines = scores.read_text().strip().split("\n")
    assert lines[0] == "id,log_value,sign,clamped,norm_loglik"
    assert len(lines) == 401
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(np.isfinite(v) for v in values)
    assert moments.exists()


def test_infer_short_sequence_exits_two(tmp_path, capsys):
    model = tmp_path / "m.json"
    data = tmp_path / "d.txt"
    learned = tmp_path / "s.bin"
    run(["gen-model", "--no", "3", "--nx", "2", "--nd", "2", "--seed", "4",
         "-o", str(model)], capsys)
    run(["gen-data", "--model", str(model), "-n", "300", "-T", "15",
         "--seed", "5", "-o", str(data)], capsys)
    run(["learn-spectral", "--data", str(data), "--nx", "2", "--nd", "2",
         "-o", str(learned)], capsys)
    code, _, err = run(
        ["infer", "--model", str(learned), "--sequence", "0 1"], capsys
    )
    assert code == 2
    assert "SequenceTooShort" in err


def test_basic_variant_pipeline(tmp_path, capsys):
    model = tmp_path / "m.json"
    data = tmp_path / "d.txt"
    learned = tmp_path / "per_t.bin"
    run(["gen-model", "--no", "3", "--nx", "2", "--nd", "2", "--seed", "6",
         "-o", str(model)], capsys)
    run(["gen-data", "--model", str(model), "-n", "500", "-T", "12",
         "--seed", "7", "-o", str(data)], capsys)
    code, _, err = run(
        ["learn-spectral", "--data", str(data), "--nx", "2", "--nd", "2",
         "--basic", "-o", str(learned)], capsys
    )
    assert code == 0, err
    code, out, _ = run(
        ["infer", "--model", str(learned), "--sequence", "0 1 1 0 2 1"], capsys
    )
    assert code == 0
    assert "log_value=" in out


def test_learn_em_cli(tmp_path, capsys):
    model = tmp_path / "m.json"
    data = tmp_path / "d.txt"
    fitted = tmp_path / "em.json"
    run(["gen-model", "--no", "3", "--nx", "2", "--nd", "1", "--seed", "8",
         "-o", str(model)], capsys)
    run(["gen-data", "--model", str(model), "-n", "50", "-T", "12",
         "--seed", "9", "-o", str(data)], capsys)
    code, out, err = run(
        ["learn-em", "--data", str(data), "--no", "3", "--nx", "2", "--nd", "1",
         "--max-iter", "5", "--restarts", "1", "--seed", "10",
         "-o", str(fitted)], capsys
    )
    assert code == 0, err
    assert "loglik=" in out
    q = load_model(fitted)
    assert (q.n_o, q.n_x, q.n_d) == (3, 2, 1)


def test_rank_check_cli(tmp_path, capsys):
    out = tmp_path / "ranks.csv"
    code, msg, _ = run(
        ["rank-check", "--nx", "2", "--nd", "2", "--seeds", "1",
         "-o", str(out)], capsys
    )
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "n_x,n_d,ell,algorithm,predicted,observed,pass"
    assert all(line.endswith("true") for line in lines[1:])


def test_bench_cli_smoke(tmp_path, capsys):
    out = tmp_path / "report.csv"
    code, msg, err = run(
        ["bench", "--sizes", "3,2,2", "--n-list", "200", "-T", "25",
         "--n-test", "20", "--seeds", "2", "--no-em", "-o", str(out)], capsys
    )
    assert code == 0, err
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 2
    cfg = json.loads((tmp_path / "report.csv.config.json").read_text())
    assert cfg["seeds"] == [0, 1]
