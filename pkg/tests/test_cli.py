import subprocess
import sys

import pytest

from exaul.cli import main
from exaul.environments import load_pool


@pytest.fixture
def pool_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen-pool", "--n", "500", "--seed", "1", "--out", str(a)]) == 0
    assert main(["gen-pool", "--n", "500", "--seed", "2", "--calibration", "over", "--incorrect-rate", "0.4",
                 "--out", str(b)]) == 0
    return a, b


class TestCli:
    def test_gen_pool(self, pool_files):
        pool = load_pool(pool_files[0])
        assert len(pool) == 500

    def test_run_then_audit(self, pool_files, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["run", "--pool", str(pool_files[0]), "--T", "300", "--grid-size", "20", "--trials", "2",
                     "--log-every", "1", "--out", str(out)])
        assert code == 0
        assert "pass_rate.lemma1=1" in capsys.readouterr().out
        assert main(["audit", "--run", str(out)]) == 0

    def test_audit_flags_corruption(self, pool_files, tmp_path, capsys):
        out = tmp_path / "run"
        main(["run", "--pool", str(pool_files[0]), "--T", "200", "--grid-size", "10", "--out", str(out)])
        path = out / "summary.csv"
        header, row = path.read_text().splitlines()
        cells = row.split(",")
        cells[header.split(",").index("lemma1_ok")] = "0"
        path.write_text(header + "\n" + ",".join(cells) + "\n")
        capsys.readouterr()
        assert main(["audit", "--run", str(out)]) == 1
        assert "lemma1_ok" in capsys.readouterr().err

    @pytest.mark.parametrize("env", ["shift-single", "shift-alternating", "shift-gradual", "adversary"])
    def test_two_pool_envs(self, pool_files, tmp_path, env):
        code = main(["run", "--algo", "exp3ix-ca", "--env", env, "--pool", str(pool_files[0]),
                     "--pool2", str(pool_files[1]), "--T", "300", "--grid-size", "10", "--chunk", "50",
                     "--window", "30", "--out", str(tmp_path / env)])
        assert code == 0

    def test_missing_second_pool(self, pool_files, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--env", "adversary", "--pool", str(pool_files[0]), "--out", str(tmp_path / "x")])
        assert exc.value.code == 2

    @pytest.mark.parametrize("args", [["run", "--pool", "x.csv", "--alpha", "1.5"], ["run", "--pool", "x.csv", "--T", "0"],
                                      ["gen-pool"], ["frobnicate"]])
    def test_usage_errors(self, args):
        with pytest.raises(SystemExit) as exc:
            main(args)
        assert exc.value.code == 2

    def test_bad_pool_file(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("score,correct\n0.3,1\n0.4,yes\n")
        with pytest.raises(SystemExit):
            main(["run", "--pool", str(path), "--out", str(tmp_path / "r")])
        assert "bad.csv:3" in capsys.readouterr().err

    def test_help_shows_defaults(self):
        proc = subprocess.run([sys.executable, "-m", "exaul", "run", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "default: 30000" in proc.stdout and "default: sqrtT" in proc.stdout
