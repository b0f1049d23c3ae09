import json

import numpy as np
import pytest

from recirc.cli import main
from recirc.config import (ConfigError, build_scenario, default_config, defaults_text, load_config, merge,
                           provenance)


def tiny_config(**problem):
    """About 100 nodes, one pump, two steps."""
    return {
        "name": "tiny",
        "mesh": {"width": 10.0, "height": 8.0, "nx": 10, "ny": 8, "control_strip_height": 2.0,
                 "pumps": [{"collector": {"side": "left", "start": 6.0, "end": 7.0},
                            "injector": {"side": "bottom", "start": 2.0, "end": 4.0}}]},
        "problem": {"T": 900.0, "dt": 450.0, "c2": 4e-4, **problem},
        "initial": {"oxycline": 5.0, "oxycline_width": 1.0},
    }


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_defaults_have_provenance_for_every_key():
    d, p = default_config(), provenance()

    def keys(node, prefix=""):
        out = set()
        for k, v in node.items():
            path = f"{prefix}.{k}"
            out |= keys(v, path) if isinstance(v, dict) and k not in ("reference", "radiation", "light") else {path}
        return out

    assert keys(d) == keys(p)
    text = defaults_text()
    assert "problem.dt = 450.0  # study value" in text
    assert "literature-typical" in text


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as err:
        merge(default_config(), {"physics": {"hydro": {"viscosity": 1.0}}})
    assert err.value.path == "physics.hydro.viscosity"


def test_validation_errors_name_the_key():
    cases = [({"problem": {"dt": 0.0}}, "problem.dt"), ({"mesh": {"nx": 2.5}}, "mesh.nx"),
             ({"problem": {"reference": {"constant": 1.0}}}, "problem.reference"),
             ({"series": {"light": {"bogus": 1}}}, "series.light"),
             ({"kinetics": {"K_F": -1.0}}, "kinetics")]
    for override, path in cases:
        cfg = merge(merge(default_config(), tiny_config()), override)
        with pytest.raises(ConfigError) as err:
            build_scenario(cfg)
        assert err.value.path == path, (override, err.value)


def test_schedule_from_file(tmp_path):
    (tmp_path / "g.csv").write_text("g1\n1e-4\n3e-4\n")
    cfg = load_config(write(tmp_path, tiny_config(reference={"file": "g.csv"})))
    np.testing.assert_array_equal(build_scenario(cfg).reference, [[1e-4], [3e-4]])
    bad = load_config(write(tmp_path, tiny_config(reference={"file": "missing.csv"}), "bad.json"))
    with pytest.raises(ConfigError, match="problem.reference"):
        build_scenario(bad)


def test_cli_validation_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--config", write(tmp_path, tiny_config(c1=1e-3, c2=1e-4)), "--out",
                 str(tmp_path / "o")]) == 1
    assert main(["optimize", "--config", write(tmp_path, tiny_config(T=0.0), "z.json"), "--out",
                 str(tmp_path / "o")]) == 1
    assert main(["simulate", "--config", write(tmp_path, {"mesh": {"nz": 3}}, "u.json"), "--out",
                 str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "mesh.nz" in err and "problem" in err
    assert main(["simulate", "--config", write(tmp_path, tiny_config()), "--out", str(tmp_path / "o"),
                 "--threads", "0"]) == 1


def test_mesh_info(tmp_path, capsys):
    assert main(["mesh-info", "--config", write(tmp_path, {"mesh": {"nx": 20, "ny": 16}})]) == 0
    out = capsys.readouterr().out
    assert "control area = 60" in out
    from recirc.mesh import generate_rect_mesh, save_mesh

    save_mesh(generate_rect_mesh(1.0, 1.0, 1, 1), tmp_path / "sq.mesh")
    assert main(["mesh-info", "--mesh", str(tmp_path / "sq.mesh")]) == 0
    out = capsys.readouterr().out.split()
    assert out[1:6:2] == ["4", "2", "4"]
    assert main(["mesh-info", "--mesh", str(tmp_path / "missing.mesh")]) == 1


def test_simulate_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, tiny_config())
    for run in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / run), "--snapshot-every", "1"]) == 0
    a, b = (tmp_path / "a" / "timeseries.csv").read_bytes(), (tmp_path / "b" / "timeseries.csv").read_bytes()
    assert a == b
    lines = a.decode().splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["t", "g1", "do_control_mean"] and header[-1] == "theta_mean"
    assert len(header) == 3 + 15 + 1 and len(lines) == 1 + 4
    snaps = sorted(p.name for p in (tmp_path / "a" / "snapshots").iterdir())
    assert snaps == [f"step_{n:05d}.csv" for n in range(4)]
    assert (tmp_path / "a" / "snapshots" / "step_00003.csv").read_text().startswith("x,y,vx,vy,p,theta,u1")


def test_optimize_writes_outputs(tmp_path, capsys):
    out = tmp_path / "opt"
    code = main(["optimize", "--config", write(tmp_path, tiny_config()), "--out", str(out)])
    assert code == 0
    g = np.loadtxt(out / "optimal_schedule.csv", delimiter=",", skiprows=1, ndmin=2)
    assert g.shape == (2, 1) and np.all(g >= 0) and np.all(g <= 4e-4)
    comp = np.loadtxt(out / "constraint_comparison.csv", delimiter=",", skiprows=1, ndmin=2)
    assert comp.shape == (2, 3) and np.all(comp[:, 1] >= comp[:, 2] - 1e-6 * comp[:, 2])
    assert "status: converged" in (out / "report.txt").read_text()


def test_check_gradient_exit_codes(tmp_path, capsys):
    cfg = write(tmp_path, tiny_config())
    assert main(["check-gradient", "--config", cfg]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["check-gradient", "--config", cfg, "--corrupt-adjoint", "1e-3"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_print_defaults(capsys):
    assert main(["print-defaults"]) == 0
    assert "kinetics.C_oc = 2.67" in capsys.readouterr().out
    assert main(["print-defaults", "--json"]) == 0
    assert json.loads(capsys.readouterr().out) == default_config()


def test_simulate_closed_basin_without_pumps(tmp_path, capsys):
    cfg = tiny_config()
    cfg["mesh"]["pumps"] = []
    out = tmp_path / "closed"
    assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    header = (out / "timeseries.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "do_control_mean"]
    assert main(["optimize", "--config", write(tmp_path, cfg, "c.json"), "--out", str(out)]) == 1
