import json

import numpy as np

import kmsflow as kf
from kmsflow.cli import main
from kmsflow.serialize import dump_json, superop_to_json


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


def write_instance(tmp_path, capsys, seed=0, n=2):
    rho = tmp_path / f"rho{seed}.json"
    psi = tmp_path / f"psi{seed}.json"
    code = main([
        "random", "--seed", str(seed), "--n", str(n),
        "--rho-out", str(rho), "--psi-out", str(psi), "--out", str(tmp_path / "r.json"),
    ])
    capsys.readouterr()
    assert code == 0
    return rho, psi


class TestRandom:
    def test_deterministic(self, capsys, tmp_path):
        _, rep1 = run(capsys, "random", "--seed", "11", "--n", "2")
        _, rep2 = run(capsys, "random", "--seed", "11", "--n", "2")
        assert rep1["results"] == rep2["results"]

    def test_instance_certifies(self, capsys, tmp_path):
        rho, psi = write_instance(tmp_path, capsys, seed=3)
        code, rep = run(capsys, "check", "--superop", str(psi), "--rho", str(rho))
        assert code == 0
        assert rep["results"]["cp"]["pass"]
        assert rep["results"]["kms_symmetric"]["pass"]

    def test_kraus_rank_zero_rejected(self, capsys):
        code, rep = run(capsys, "random", "--seed", "0", "--n", "2", "--kraus-rank", "0")
        assert code == 2
        assert rep["error"]["type"] == "usage"

    def test_config_with_fixed_rho(self, capsys, tmp_path):
        from kmsflow.serialize import density_to_json

        ctx = kf.DensityContext.from_rho(np.diag([0.75, 0.25]))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "n": 2, "seed": 5, "rho": density_to_json(ctx), "kraus_rank": 2,
        }))
        code, rep = run(capsys, "random", "--config", str(cfg))
        assert code == 0
        np.testing.assert_allclose(rep["results"]["rho"]["re"], [[0.75, 0], [0, 0.25]])

    def test_seeded_command_honors_given_rho(self, capsys, tmp_path):
        rho, _ = write_instance(tmp_path, capsys, seed=20)
        code, rep = run(capsys, "derive", "--method", "gns", "--seed", "21",
                        "--n", "2", "--rho", str(rho))
        assert code == 0
        assert rep["results"]["gns_form"]["pass"]


class TestCheck:
    def test_transpose_map_fails(self, capsys, tmp_path):
        n = 2
        mat = np.zeros((4, 4))
        for i in range(n):
            for j in range(n):
                mat[i * n + j, j * n + i] = 1.0
        f = tmp_path / "transpose.json"
        dump_json(superop_to_json(kf.Superoperator(mat, 2)), str(f))
        code, rep = run(capsys, "check", "--superop", str(f))
        assert code == 1
        assert rep["results"]["cp"]["pass"] is False
        assert abs(rep["results"]["cp"]["metrics"]["min_choi_eig"] + 1.0) < 1e-12

    def test_schema_error_exit_2(self, capsys, tmp_path):
        f = tmp_path / "broken.json"
        f.write_text('{"n": 2, "re": [[1,0],[0,1]]}')  # missing "im"
        code, rep = run(capsys, "check", "--superop", str(f))
        assert code == 2
        assert rep["error"]["type"] == "schema"

    def test_parse_error_exit_2(self, capsys, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        code, rep = run(capsys, "check", "--superop", str(f))
        assert code == 2


class TestVTransformCommand:
    def test_identity_passes_through(self, capsys, tmp_path):
        rho, _ = write_instance(tmp_path, capsys, seed=5)
        f = tmp_path / "id.json"
        dump_json(superop_to_json(kf.identity_superop(2, "l2")), str(f))
        code, rep = run(capsys, "vtransform", "--superop", str(f), "--rho", str(rho))
        assert code == 0
        out = rep["results"]["transformed"]
        mat = np.asarray(out["re"]) + 1j * np.asarray(out["im"])
        assert np.abs(mat - np.eye(4)).max() < 1e-12
        assert rep["results"]["inverse_residual"] < 1e-12

    def test_quadrature_report(self, capsys, tmp_path):
        rho, psi = write_instance(tmp_path, capsys, seed=6)
        code, rep = run(
            capsys, "vtransform", "--superop", str(psi), "--rho", str(rho),
            "--quadrature", "200000",
        )
        assert code == 0
        q = rep["results"]["quadrature"]
        assert q["closed_form_distance"] < 1e-6
        assert q["tail_bound"] < 1e-8


class TestGeneratorCommands:
    def test_gen_from_cp(self, capsys, tmp_path):
        rho, psi = write_instance(tmp_path, capsys, seed=7)
        code, rep = run(capsys, "gen-from-cp", "--psi", str(psi), "--rho", str(rho))
        assert code == 0
        for name in ("unital_kernel", "kms_symmetric", "ccn"):
            assert rep["results"][name]["pass"]

    def test_recover_cp_seeded(self, capsys):
        code, rep = run(capsys, "recover-cp", "--seed", "8", "--n", "2")
        assert code == 0
        assert rep["results"]["recover_cp"]["pass"]
        assert rep["results"]["cp"]["pass"]

    def test_simulate(self, capsys):
        code, rep = run(capsys, "simulate", "--seed", "9", "--n", "2",
                        "--t", "1.0", "--steps", "8", "64")
        assert code == 0
        res = rep["results"]["chernoff_residuals"]
        assert res["64"] <= res["8"]

    def test_dirichlet_check(self, capsys):
        code, rep = run(capsys, "dirichlet-check", "--seed", "10", "--n", "2",
                        "--trials", "10")
        assert code == 0
        assert rep["results"]["contraction"]["pass"]
        assert abs(rep["results"]["cyclic_energy"]) < 1e-10


class TestDerive:
    def test_both_routes_and_witness(self, capsys):
        code, rep = run(capsys, "derive", "--method", "both", "--seed", "7", "--n", "2")
        assert code == 0
        assert rep["results"]["gram_mismatch_max"] <= 1e-6
        assert rep["results"]["uniqueness"]["pass"]
        assert rep["results"]["calculus_invariants"]["pass"]
        assert rep["results"]["inner_vector_residual"] <= 1e-7

    def test_single_route(self, capsys):
        code, rep = run(capsys, "derive", "--method", "gns", "--seed", "2", "--n", "2")
        assert code == 0
        assert rep["results"]["gns_form"]["pass"]
        assert "kraus_form" not in rep["results"]

    def test_kraus_route_and_dump(self, capsys, tmp_path):
        dump = tmp_path / "calc.json"
        code, rep = run(capsys, "derive", "--method", "kraus", "--seed", "3",
                        "--n", "2", "--dump", str(dump))
        assert code == 0
        assert rep["results"]["kraus_form"]["pass"]
        doc = json.loads(dump.read_text())
        assert "kraus_family" in doc and "V" in doc["kraus_family"]

    def test_dump_both_contains_calculus(self, capsys, tmp_path):
        dump = tmp_path / "full.json"
        code, _ = run(capsys, "derive", "--method", "both", "--seed", "1",
                      "--n", "2", "--dump", str(dump))
        assert code == 0
        doc = json.loads(dump.read_text())
        assert doc["gns_calculus"]["dimH"] > 0
        assert set(doc["gns_calculus"]["delta"]) == {"00", "01", "10", "11"}


class TestVerify:
    def test_idempotent_verdicts(self, capsys, tmp_path):
        out = tmp_path / "report.json"
        code = main(["derive", "--method", "both", "--seed", "4", "--n", "2",
                     "--out", str(out)])
        capsys.readouterr()
        assert code == 0
        code2, rep2 = run(capsys, "verify", "--report", str(out))
        assert code2 == 0
        assert rep2["results"]["idempotent"]["pass"]

    def test_tampered_report_detected(self, capsys, tmp_path):
        out = tmp_path / "report.json"
        rho, psi = write_instance(tmp_path, capsys, seed=12)
        code = main(["check", "--superop", str(psi), "--rho", str(rho),
                     "--out", str(out)])
        capsys.readouterr()
        assert code == 0
        doc = json.loads(out.read_text())
        doc["results"]["cp"]["pass"] = False  # tamper the verdict only
        out.write_text(json.dumps(doc))
        code2, rep2 = run(capsys, "verify", "--report", str(out))
        assert code2 == 1
        assert not rep2["results"]["idempotent"]["pass"]

    def test_full_precision_serialization(self, capsys, tmp_path):
        rho, psi = write_instance(tmp_path, capsys, seed=13)
        doc = json.loads((psi).read_text())
        ctx, psi_obj = kf.random_instance(2, 13)
        mat = np.asarray(doc["re"]) + 1j * np.asarray(doc["im"])
        np.testing.assert_array_equal(mat, psi_obj.mat)
