import json

import pytest
from click.testing import CliRunner

from gkzflop.cli import (EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC, EXIT_PASS, ConfigError, bundled_configs,
                         cmd_info, cmd_solve, cmd_verify, dumps, load_config, main, parse_config)

A1 = {"name": "A1", "points": [[1, 0], [1, 1], [1, 2]],
      "triangulations": {"fine": [0, -1, 0], "coarse": [0, 1, 0]},
      "flips": {"resolution": ["fine", "coarse"]}}


def run(*args):
    r = CliRunner().invoke(main, list(args))
    return r.exit_code, r.output


def test_bundled():
    assert bundled_configs() == ["a1", "a2", "conifold", "simplex"]
    for name in bundled_configs():
        cfg = load_config(name)
        assert cfg.triangulations


class TestConfig:
    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            parse_config({**A1, "colour": 1})
        with pytest.raises(ConfigError):
            parse_config({**A1, "settings": {"bond": 3}})
        with pytest.raises(ConfigError):
            parse_config({**A1, "evaluation": [{"triangulation": "fine", "z": [[1, 0]] * 3, "w": 1}]})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            parse_config({**A1, "points": [[1, 0.5]]})
        with pytest.raises(ConfigError):
            parse_config({**A1, "flips": {"x": ["fine", "nope"]}})
        with pytest.raises(ConfigError):
            parse_config({**A1, "settings": {"bound": True}})

    def test_args_must_match(self):
        ev = {"triangulation": "fine", "z": [[1, 0], [0, -2], [1, 0]], "args": ["0", "1/2", "0"]}
        with pytest.raises(ConfigError):
            parse_config({**A1, "evaluation": [ev]})
        ev["args"] = ["0", "-1/2", "0"]
        cfg = parse_config({**A1, "evaluation": [ev]})
        assert cfg.evaluation[0].args_over_pi == ["0", "-1/2", "0"]

    def test_defaults_resolved(self):
        cfg = parse_config(A1)
        assert cfg.resolved()["settings"]["bound"] == 12

    def test_parse_error_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"points": [[1, 0]\n')
        with pytest.raises(ConfigError, match="line"):
            load_config(str(p))


class TestCommands:
    def test_info(self):
        out = cmd_info(load_config("a1"))["result"]
        assert out["volume"] == 2 and out["n"] == 3
        assert out["triangulations"]["coarse"]["maximal_cones"] == [[0, 2]]
        assert [b["v"] for b in out["triangulations"]["coarse"]["box"]] == [[0, 0], [1, 1]]

    def test_solve(self):
        out = cmd_solve(load_config("a1"), "fine")["result"]
        assert out["z_source"] == "evaluation[0]" and len(out["xi"]) == 2
        assert max(out["residuals"].values()) <= 1e-8

    def test_solve_simplex_default_point(self):
        out = cmd_solve(load_config("simplex"))["result"]
        assert out["z_source"] in ("default", "evaluation[0]")
        assert len(out["xi"]) == 1

    def test_verify_determinism(self):
        cfg = load_config("a1")
        a = dumps(cmd_verify(cfg))
        b = dumps(cmd_verify(load_config("a1")))
        assert a == b
        assert json.loads(a)["result"]["status"] == "PASS"


class TestExitCodes:
    def test_info(self):
        code, out = run("info", "--config", "conifold")
        assert code == EXIT_PASS
        assert json.loads(out)["result"]["volume"] == 2

    def test_verify_pass_and_control(self):
        assert run("verify", "--config", "a1")[0] == EXIT_PASS
        code, out = run("verify", "--config", "a1", "--negative-control")
        assert code == EXIT_FAIL
        assert json.loads(out)["result"]["checks"]["diagram"]["passed"] is False

    def test_input_errors(self, tmp_path):
        assert run("info", "--config", "no-such-config")[0] == EXIT_INPUT
        p = tmp_path / "x.toml"
        p.write_text('points = [[1, 0], [1, 1]]\nextra = 1\n')
        assert run("info", "--config", str(p))[0] == EXIT_INPUT
        assert run("solve", "--config", "a1", "--z", "7")[0] == EXIT_INPUT
        assert run("verify", "--config", "a1", "--flip", "nope")[0] == EXIT_INPUT

    def test_numeric_error(self):
        # four quadrature nodes cannot resolve the contour integrals
        assert run("verify", "--config", "a1", "--nodes", "4")[0] == EXIT_NUMERIC
