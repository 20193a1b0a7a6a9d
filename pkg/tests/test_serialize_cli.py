import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from wstate.cli import main
from wstate.errors import SchemaError
from wstate.instrument import QuantumState, apply_exact
from wstate.lcs import LcsProblem, preparation_unitary
from wstate.serialize import (
    EstimationTask,
    detect_kind,
    dump_any,
    instrument_from_json,
    instrument_to_json,
    io_roundtrip,
    layout_from_json,
    layout_to_json,
    lcs_from_json,
    lcs_to_json,
    load_any,
    measurement_from_json,
    polyspec_from_json,
    polyspec_to_json,
    state_from_json,
    state_to_json,
    task_from_json,
    task_to_json,
)
from wstate.subroutines import (
    PolySpec,
    build_gqt_instrument,
    build_qhp_instrument,
    build_teleport_instrument,
)
from wstate.tensor import Register, RegisterLayout

from conftest import rand_density, rand_state


def fixed_point(doc):
    kind, value = load_any(doc)
    once = dump_any(kind, value)
    kind2, value2 = load_any(once)
    assert kind2 == kind
    assert json.dumps(once, sort_keys=True) == json.dumps(dump_any(kind2, value2), sort_keys=True)
    return value


class TestDocumentRoundtrips:
    def test_state_pure_and_density(self, rng):
        fixed_point(state_to_json(QuantumState.pure(rand_state(rng, 4))))
        fixed_point(state_to_json(QuantumState.from_density(rand_density(rng, 3))))

    def test_layout_qubits_vs_dim(self):
        lay = RegisterLayout.of(
            Register("A", 3, role="E", source="ancilla"), Register("B", 4, role="S")
        )
        doc = layout_to_json(lay)
        assert doc["registers"][0]["dim"] == 3
        assert doc["registers"][1]["qubits"] == 2
        back = fixed_point(doc)
        assert back.dims == (3, 4)

    def test_instrument_with_permutation_unitary(self, rng):
        inst = build_qhp_instrument(1)
        doc = instrument_to_json(inst)
        assert "permutation" in doc["unitary"]
        back = fixed_point(doc)
        inputs = [
            QuantumState.from_density(rand_density(rng, 2)),
            QuantumState.from_density(rand_density(rng, 2)),
        ]
        assert np.abs(
            apply_exact(back, inputs).matrix - apply_exact(inst, inputs).matrix
        ).max() < 1e-12

    def test_instrument_with_decomposed_measurement(self, rng):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        inst = build_teleport_instrument(1, [(np.eye(2), x)])
        doc = instrument_to_json(inst)
        assert doc["measurement"]["kind"] == "nonnormal"
        assert len(doc["measurement"]["decomposition"]) == 2
        fixed_point(doc)

    def test_polyspec(self):
        fixed_point(polyspec_to_json(PolySpec({(1, 0): 1.0, (3, 0): -1 / 3})))

    def test_combination_both_encodings(self, rng):
        prob = LcsProblem.from_states([rand_state(rng, 4) for _ in range(2)], [0.6, 0.8])
        fixed_point(lcs_to_json(prob))
        probu = LcsProblem.from_unitaries(
            [preparation_unitary(rand_state(rng, 4)) for _ in range(2)], [1.0, 1.0j]
        )
        fixed_point(lcs_to_json(probu))

    def test_task(self, rng):
        inst = build_gqt_instrument(1)
        inputs = (
            QuantumState.from_density(rand_density(rng, 2)),
            QuantumState.from_density(rand_density(rng, 2)),
        )
        task = EstimationTask(inst, inputs, np.diag([1.0, -1.0]).astype(complex))
        doc = task_to_json(task)
        assert detect_kind(doc) == "task"
        fixed_point(doc)


class TestSchemaErrors:
    def test_missing_state_payload(self):
        with pytest.raises(SchemaError) as exc:
            state_from_json({"kind": "pure"})
        assert "vector" in str(exc.value)

    def test_bad_register_entry(self):
        with pytest.raises(SchemaError) as exc:
            layout_from_json({"registers": [{"label": "A", "qubits": 1, "dim": 2}]})
        assert "registers[0]" in str(exc.value)

    def test_unknown_role(self):
        with pytest.raises(SchemaError):
            layout_from_json({"registers": [{"label": "A", "qubits": 1, "role": "Q"}]})

    def test_measurement_kind_checked(self):
        doc = {"matrix": {"dims": [1, 1], "data": [[1.0, 0.0]]}, "kind": "diagonal"}
        with pytest.raises(SchemaError):
            measurement_from_json(doc)

    def test_bad_permutation(self):
        inst = build_qhp_instrument(1)
        doc = instrument_to_json(inst)
        doc["unitary"]["permutation"][0] = doc["unitary"]["permutation"][1]
        with pytest.raises(SchemaError):
            instrument_from_json(doc)

    def test_task_input_count(self, rng):
        inst = build_qhp_instrument(1)
        doc = task_to_json(
            EstimationTask(
                inst,
                (
                    QuantumState.from_density(rand_density(rng, 2)),
                    QuantumState.from_density(rand_density(rng, 2)),
                ),
                np.eye(2),
            )
        )
        doc["inputs"] = doc["inputs"][:1]
        with pytest.raises(SchemaError):
            task_from_json(doc)

    def test_mixed_state_encodings_rejected(self, rng):
        prob = LcsProblem.from_states([rand_state(rng, 2) for _ in range(2)], [1.0, 1.0])
        doc = lcs_to_json(prob)
        doc["states"][0] = {"unitary": {"dims": [2, 2], "data": [[1, 0], [0, 0], [0, 0], [1, 0]]},
                           "prepares_from_zero": True}
        with pytest.raises(SchemaError):
            lcs_from_json(doc)

    def test_detect_kind_unrecognized(self):
        with pytest.raises(SchemaError):
            detect_kind({"mystery": 1})


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def task_file(tmp_path, rng):
    inst = build_qhp_instrument(1)
    inputs = (
        QuantumState.pure(rand_state(rng, 2)),
        QuantumState.pure(rand_state(rng, 2)),
    )
    task = EstimationTask(inst, inputs, np.diag([1.0, -1.0]).astype(complex))
    path = tmp_path / "task.json"
    path.write_text(json.dumps(task_to_json(task)))
    return str(path)


@pytest.fixture
def combo_file(tmp_path, rng):
    prob = LcsProblem.from_states([rand_state(rng, 4) for _ in range(2)], [0.6, 0.8])
    doc = lcs_to_json(prob)
    doc["observable"] = {
        "dims": [4, 4],
        "data": [[float((i == j) * (1 - 2 * (i % 2))), 0.0] for i in range(4) for j in range(4)],
    }
    path = tmp_path / "combo.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestCli:
    def test_estimate_consistent_with_variance(self, runner, task_file):
        est = runner.invoke(main, ["estimate", "--spec", task_file, "--shots", "50000", "--seed", "1"])
        assert est.exit_code == 0, est.output
        var = runner.invoke(main, ["variance", "--spec", task_file])
        assert var.exit_code == 0
        e, v = json.loads(est.output), json.loads(var.output)
        assert abs(e["analytic_mean"][0] - v["mean"][0]) < 1e-12
        assert abs(e["analytic_variance"] - v["variance_per_shot"]) < 1e-12

    def test_estimate_deterministic(self, runner, task_file):
        args = ["estimate", "--spec", task_file, "--shots", "9999", "--seed", "4"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.output == b.output

    def test_bound_orders(self, runner, task_file):
        res = runner.invoke(main, ["bound", "--spec", task_file])
        assert res.exit_code == 0
        payload = json.loads(res.output)
        assert payload["b1"] <= payload["b2"] + 1e-12

    def test_design_beta(self, runner):
        res = runner.invoke(main, ["design-beta", "--p", "0.5", "--r", "0.3"])
        assert res.exit_code == 0
        assert json.loads(res.output)["q_opt"] == 0.5

    def test_hoeffding(self, runner):
        res = runner.invoke(main, ["hoeffding", "--epsilon", "0.1", "--delta", "0.05"])
        assert res.exit_code == 0
        assert json.loads(res.output)["shots"] == 738

    def test_lcs_routes_agree(self, runner, combo_file):
        aao = runner.invoke(main, ["lcs", "all-at-once", "--spec", combo_file])
        lcu = runner.invoke(main, ["lcs", "lcu", "--spec", combo_file])
        assert aao.exit_code == 0 and lcu.exit_code == 0
        e1 = json.loads(aao.output)["expectation"][0]
        e2 = json.loads(lcu.output)["combination_expectation"][0]
        assert abs(e1 - e2) < 1e-9

    def test_lcs_incoherent_reports(self, runner, combo_file):
        res = runner.invoke(
            main,
            ["lcs", "incoherent", "--spec", combo_file, "--shots", "20000", "--seed", "2"],
        )
        assert res.exit_code == 0
        payload = json.loads(res.output)
        assert payload["shots"] == 20000

    def test_experiment_writes_csv(self, runner, tmp_path):
        spec = tmp_path / "exp.json"
        spec.write_text(
            json.dumps(
                {
                    "experiment": "opt-beta-surface",
                    "seed": 0,
                    "params": {"p_grid": [0.5], "r_grid": [0.5]},
                }
            )
        )
        out = tmp_path / "table.csv"
        res = runner.invoke(main, ["experiment", "--spec", str(spec), "--out", str(out)])
        assert res.exit_code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# {")
        assert lines[1] == "p,r,q_opt,bound_at_opt"
        assert len(lines) == 3

    def test_validate(self, runner, task_file):
        res = runner.invoke(main, ["validate", "--spec", task_file])
        assert res.exit_code == 0
        assert json.loads(res.output) == {"kind": "task", "stable": True}

    def test_schema_error_exits_2(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "pure"}')
        res = runner.invoke(main, ["validate", "--spec", str(bad)])
        assert res.exit_code == 2

    def test_numerical_precondition_exits_3(self, runner, tmp_path):
        doc = {
            "states": [
                {"dims": [2], "data": [[1.0, 0.0], [0.0, 0.0]]},
                {"dims": [2], "data": [[0.0, 0.0], [1.0, 0.0]]},
            ],
            "alphas": [[0.6, 0.0], [0.8, 0.0]],
        }
        path = tmp_path / "ortho.json"
        path.write_text(json.dumps(doc))
        res = runner.invoke(main, ["lcs", "all-at-once", "--spec", str(path)])
        assert res.exit_code == 3

    def test_unknown_experiment_exits_2(self, runner, tmp_path):
        spec = tmp_path / "exp.json"
        spec.write_text(json.dumps({"experiment": "nope"}))
        res = runner.invoke(main, ["experiment", "--spec", str(spec)])
        assert res.exit_code == 2

    def test_io_roundtrip_function(self, tmp_path, rng):
        inst = build_gqt_instrument(1)
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(instrument_to_json(inst)))
        assert io_roundtrip(str(path)) == {"kind": "instrument", "stable": True}
