from __future__ import annotations

import io
import json
import tempfile
import unittest
from pathlib import Path

from cascade_lab.cli import compute_config, main, parse_args

TC = "atoms=0,2;probs=1/2,1/2"
HALVES = "atoms=1/2,3/2;probs=1/2,1/2"


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def _json(text: str):
    return json.loads(text)


class TestParseArgs(unittest.TestCase):
    def test_depth_ranges(self):
        args = parse_args(["simulate", "--dist", TC, "-n", "8:10", "-q", "2", "--samples", "64",
                           "--seed", "1"])
        cfg = compute_config(args)
        self.assertEqual([c.n for c in cfg.extras["configs"]], [8, 9, 10])
        self.assertEqual(cfg.params["depths"], [8, 9, 10])

    def test_missing_required_argument_exits(self):
        with self.assertRaises(SystemExit):
            parse_args(["exact-moments", "--dist", TC])

    def test_threads_must_be_positive(self):
        code, _, err = run(["--threads", "0", "exact-moments", "--dist", TC, "--q-max", "2",
                            "-N", "3"])
        self.assertEqual(code, 2)
        self.assertIn("[ERROR] --threads", err)


class TestCommands(unittest.TestCase):
    def test_exact_moments_csv(self):
        code, out, err = run(["exact-moments", "--dist", TC, "--q-max", "2", "-N", "10"])
        self.assertEqual(code, 0)
        lines = out.splitlines()
        self.assertEqual(lines[0], "n,k,value,log_value,domain")
        self.assertTrue(any(line.startswith("10,2,6.0,") for line in lines))
        self.assertIn("[INFO] config", err)

    def test_exact_moments_writes_sidecar(self):
        with tempfile.TemporaryDirectory() as td:
            path = Path(td) / "m.csv"
            code, out, err = run(
                ["exact-moments", "--dist", TC, "--q-max", "2", "-N", "4", "--out", str(path)]
            )
            self.assertEqual(code, 0)
            self.assertEqual(out, "")
            self.assertTrue(path.read_text(encoding="utf-8").startswith("n,k,value"))
            sidecar = _json((Path(td) / "m.csv.config.json").read_text(encoding="utf-8"))
            self.assertEqual(sidecar["command"], "exact-moments")
            self.assertEqual(sidecar["N"], 4)
            self.assertIn("wrote", err)

    def test_resource_limit_exit_code(self):
        code, _, err = run(["exact-moments", "--dist", TC, "--q-max", "65", "-N", "3"])
        self.assertEqual(code, 3)
        self.assertIn("[ERROR]", err)

    def test_bad_distribution_exit_code(self):
        code, _, err = run(["critical-q", "--dist", "atoms=0,2;probs=1/2"])
        self.assertEqual(code, 2)
        self.assertIn("[ERROR]", err)
        code, _, _ = run(["critical-q", "--dist", "atoms=0,3;probs=1/2,1/2"])
        self.assertEqual(code, 2)

    def test_critical_q_summaries(self):
        code, out, err = run(["critical-q", "--dist", TC])
        self.assertEqual(code, 0)
        self.assertIn("[INFO] totally critical", err)
        self.assertTrue(_json(out)["totally_critical"])

        for law in (HALVES, "atoms=0,3;probs=2/3,1/3"):
            _, out, err = run(["critical-q", "--dist", law])
            self.assertIn("no critical exponent <= 128", err)
            self.assertIsNone(_json(out)["q_crit"])

    def test_critical_q_from_json_file(self):
        with tempfile.TemporaryDirectory() as td:
            path = Path(td) / "law.json"
            law = {"atoms": [2.732050807568877, 0.42264973081037416], "probs": [0.25, 0.75]}
            path.write_text(json.dumps(law), encoding="utf-8")
            code, out, err = run(["critical-q", "--dist", f"@{path}", "--grid", "1,2,3"])
            self.assertEqual(code, 0)
            payload = _json(out)
            self.assertAlmostEqual(payload["q_crit"], 2.0, places=8)
            self.assertEqual([row[0] for row in payload["phi_grid"]], [1.0, 2.0, 3.0])
            self.assertIn("[INFO] q_crit = ", err)

    def test_theta_moments_profile(self):
        code, out, _ = run(["theta-moments", "--dist", TC, "--profile", "1,1", "--q-max", "2"])
        self.assertEqual(code, 0)
        moments = _json(out)["moments"]
        self.assertEqual(moments["domain"], "exact")
        self.assertEqual(moments["values"], [1.0, 3.0, 11.0])

    def test_bounds(self):
        code, out, _ = run(["bounds", "--dist", TC, "-q", "1.5", "-n", "10"])
        self.assertEqual(code, 0)
        bounds = _json(out)["bounds"]
        self.assertAlmostEqual(bounds["lower"], 1.0, places=10)
        self.assertAlmostEqual(bounds["upper_core"], 11.0, places=9)

    def test_reduce_pipeline_and_single_step(self):
        code, out, _ = run(["reduce", "--dist", HALVES, "-n", "6", "-q", "4"])
        self.assertEqual(code, 0)
        stages = _json(out)["stages"]
        self.assertEqual([s["exponent"] for s in stages], [4.0, 2.0, 1.0])

        code, _, err = run(["reduce", "--dist", TC, "-n", "6", "-q", "4"])
        self.assertEqual(code, 1)
        self.assertIn("[ERROR]", err)

        code, out, _ = run(["reduce", "--dist", TC, "--profile", "1,1"])
        self.assertEqual(code, 0)
        self.assertIn("beta", _json(out))

    def test_simulate_is_thread_invariant(self):
        argv = ["simulate", "--dist", TC, "-n", "0,3", "-q", "2", "--samples", "64",
                "--seed", "3"]
        code, one, _ = run(argv)
        self.assertEqual(code, 0)
        _, four, _ = run(["--threads", "4", *argv])
        self.assertEqual(one, four)
        lines = one.splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[1], "0,2.0,1.0,0.0,1.0,1.0,0.015625,64,3")

    def test_oracle_check(self):
        code, out, _ = run(["oracle-check", "--instances", "3", "--seed", "5"])
        self.assertEqual(code, 0)
        summary = _json(out)["summary"]
        self.assertTrue(summary["passed"])
        self.assertEqual(summary["instances"], 3)


class TestVerifyTheorems(unittest.TestCase):
    SUITE = {
        "experiments": [
            {
                "name": "tc",
                "b": 2,
                "dist": TC,
                "q": 2,
                "N": 64,
                "window": [8, 64],
                "tolerance": 0.15,
                "expect_totally_critical": True,
            }
        ]
    }

    def test_pass_and_fail(self):
        with tempfile.TemporaryDirectory() as td:
            path = Path(td) / "suite.json"
            path.write_text(json.dumps(self.SUITE), encoding="utf-8")

            code, out, err = run(["verify-theorems", "--config", str(path)])
            self.assertEqual(code, 0)
            bundle = _json(out)
            self.assertTrue(bundle["passed"])
            self.assertEqual(bundle["config"]["suite"], self.SUITE)
            self.assertIn("all 1 verdicts passed", err)

            code, out, err = run(["verify-theorems", "--config", str(path), "--tolerance", "0"])
            self.assertEqual(code, 1)
            self.assertEqual(_json(out)["failed"], ["tc"])
            self.assertIn("[ERROR] failed verdicts: tc", err)

    def test_output_is_thread_invariant(self):
        with tempfile.TemporaryDirectory() as td:
            path = Path(td) / "suite.json"
            path.write_text(json.dumps(self.SUITE), encoding="utf-8")
            a, b = Path(td) / "a.json", Path(td) / "b.json"
            run(["verify-theorems", "--config", str(path), "--out", str(a)])
            run(["--threads", "3", "verify-theorems", "--config", str(path), "--out", str(b)])
            self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_missing_config(self):
        code, _, err = run(["verify-theorems", "--config", "/nonexistent/suite.json"])
        self.assertEqual(code, 2)
        self.assertIn("not found", err)


if __name__ == "__main__":
    unittest.main()
