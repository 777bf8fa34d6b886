import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import toy_sample
from extval.balancer import solve
from extval.data import (
    DataError,
    MomentTarget,
    ReportedStat,
    Sample,
    Term,
    TransformedMatrix,
    TransformSpec,
    apply_transforms,
    class_statistics,
    convert_reported_stats,
    load_sample_csv,
    load_stats_json,
    prune_low_variance_columns,
    stats_from_sample,
    write_sample_csv,
    write_stats_json,
)
from extval.simulator import SemConfig, generate_experiment_triplet

TWO_FEATURE_SPEC = TransformSpec((
    Term("perClassMean", "x1", 1), Term("perClassMean", "x1", 0),
    Term("perClassMean", "x2", 1), Term("perClassMean", "x2", 0),
    Term("prevalence"),
))


class TestSample:
    def test_valid(self):
        s = Sample([[2.0], [3.0]], [1, 0], ("x1",))
        assert (s.n, s.p) == (2, 1)
        np.testing.assert_array_equal(s.column("x1"), [2.0, 3.0])

    @pytest.mark.parametrize("features, outcomes, names, fragment", [
        ([[1.0], [np.nan]], [0, 1], ("a",), "missing"),
        ([[1.0], [2.0]], [0, 2], ("a",), "binary"),
        ([[1.0, 2.0]], [0], ("a", "a"), "unique"),
        ([[1.0]], [0, 1], ("a",), "outcomes has shape"),
    ])
    def test_invalid(self, features, outcomes, names, fragment):
        with pytest.raises(DataError, match=fragment):
            Sample(features, outcomes, names)

    def test_immutable_copy(self):
        x = np.ones((2, 1))
        s = Sample(x, [0, 1], ("a",))
        x[0, 0] = 5.0
        assert s.features[0, 0] == 1.0
        with pytest.raises(ValueError):
            s.features[0, 0] = 2.0


class TestCsv:
    def test_parse(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("x1,y\n2,1\n3,0\n")
        s = load_sample_csv(path, "y")
        np.testing.assert_array_equal(s.features, [[2.0], [3.0]])
        np.testing.assert_array_equal(s.outcomes, [1, 0])

    @pytest.mark.parametrize("content, fragment", [
        ("x1,y\n2,2\n", "outcome not binary at row 1"),
        ("x1,y\nabc,1\n", "row 1, column 'x1'"),
        ("x1,x1,y\n1,2,1\n", "duplicate header 'x1'"),
        ("x1,z\n1,1\n", "outcome column 'y'"),
        ("x1,y\n1,1,3\n", "row 1 has 3 cells"),
        ("", "empty file"),
    ])
    def test_errors(self, tmp_path, content, fragment):
        path = tmp_path / "s.csv"
        path.write_text(content)
        with pytest.raises(DataError, match=fragment):
            load_sample_csv(path, "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_sample_csv(tmp_path / "nope.csv", "y")

    def test_simulation_round_trip_is_bit_exact(self, tmp_path):
        data = generate_experiment_triplet(SemConfig(seed=4), 5000, 1, 1)
        path = tmp_path / "train.csv"
        write_sample_csv(data.internal_train, path)
        back = load_sample_csv(path, "y")
        assert back.features.shape == (5000, 10)
        np.testing.assert_array_equal(back.features, data.internal_train.features)
        np.testing.assert_array_equal(back.outcomes, data.internal_train.outcomes)
        assert back.feature_names == data.internal_train.feature_names


class TestTransforms:
    def test_positive_row(self):
        z = apply_transforms(Sample([[2.0, 3.0]], [1], ("x1", "x2")), TWO_FEATURE_SPEC)
        np.testing.assert_array_equal(z.z[0], [2, 0, 3, 0, 1])

    def test_negative_row(self):
        z = apply_transforms(Sample([[2.0, 3.0]], [0], ("x1", "x2")), TWO_FEATURE_SPEC)
        np.testing.assert_array_equal(z.z[0], [0, 2, 0, 3, 0])

    def test_second_moment(self):
        spec = TransformSpec((Term("perClassSecondMoment", "x1", 1),))
        assert apply_transforms(Sample([[2.0]], [1], ("x1",)), spec).z[0, 0] == 4.0

    def test_unknown_feature(self):
        spec = TransformSpec((Term("marginalMean", "nope"),))
        with pytest.raises(DataError, match="unknown feature 'nope'"):
            apply_transforms(Sample([[2.0]], [1], ("x1",)), spec)

    def test_duplicate_terms_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            TransformSpec((Term("prevalence"), Term("prevalence")))

    @pytest.mark.parametrize("kind, feature, cls", [
        ("perClassMean", "x", None), ("prevalence", "x", None), ("marginalMean", "x", 1), ("bogus", None, None),
    ])
    def test_bad_terms(self, kind, feature, cls):
        with pytest.raises(DataError):
            Term(kind, feature, cls)

    @settings(max_examples=50, deadline=None)
    @given(
        x=arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 3)),
                 elements=st.floats(-1e3, 1e3, allow_nan=False)),
        data=st.data(),
    )
    def test_columns_partition_features(self, x, data):
        y = data.draw(arrays(np.int8, x.shape[0], elements=st.integers(0, 1)))
        names = tuple(f"f{j}" for j in range(x.shape[1]))
        s = Sample(x, y, names)
        spec = TransformSpec.class_moments(names)
        z = apply_transforms(s, spec)
        for j, name in enumerate(names):
            cols = [spec.terms.index(Term("perClassMean", name, c)) for c in (1, 0)]
            np.testing.assert_array_equal(z.z[:, cols[0]] + z.z[:, cols[1]], x[:, j])
            sq = spec.terms.index(Term("perClassSecondMoment", name, 1))
            np.testing.assert_array_equal(z.z[:, sq], x[:, j] ** 2 * y)
        np.testing.assert_array_equal(z.z[:, -1], y)


class TestStats:
    def test_mean(self):
        spec = TransformSpec((Term("perClassMean", "x1", 1), Term("prevalence")))
        t = stats_from_sample(Sample([[0.0], [1.0]], [1, 1], ("x1",)), spec)
        np.testing.assert_array_equal(t.values, [0.5, 1.0])
        assert t.n_external == 2

    def test_prevalence_only(self):
        s = toy_sample(np.random.default_rng(0))
        t = stats_from_sample(s, TransformSpec((Term("prevalence"),)))
        assert t.values[0] == pytest.approx(s.outcomes.mean(), abs=0)

    def test_matches_hand_column_means_on_sem_output(self):
        ext = generate_experiment_triplet(SemConfig(seed=9), 1, 1, 3000).external
        spec = TransformSpec.class_moments(ext.feature_names)
        t = stats_from_sample(ext, spec)
        x, y = ext.features, ext.outcomes
        j = 3
        expected = [
            sum(x[i, j] for i in range(ext.n) if y[i] == 1) / ext.n,
            sum(x[i, j] ** 2 for i in range(ext.n) if y[i] == 0) / ext.n,
            sum(int(v) for v in y) / ext.n,
        ]
        got = [
            t.values[spec.terms.index(Term("perClassMean", "x4", 1))],
            t.values[spec.terms.index(Term("perClassSecondMoment", "x4", 0))],
            t.values[-1],
        ]
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_prevalence_range(self):
        with pytest.raises(DataError, match="prevalence"):
            MomentTarget([1.5], (Term("prevalence"),))

    def test_json_round_trip(self, tmp_path):
        spec = TransformSpec.class_moments(["a", "b"])
        t = MomentTarget(np.linspace(0.1, 0.9, len(spec)), spec.terms, 123)
        write_stats_json(t, tmp_path / "s.json")
        back = load_stats_json(tmp_path / "s.json")
        assert back.terms == t.terms and back.n_external == 123
        np.testing.assert_array_equal(back.values, t.values)

    @pytest.mark.parametrize("obj, fragment", [
        ({"values": [1]}, "'spec'"),
        ({"spec": [{"kind": "prevalence"}], "values": ["x"]}, "'values'"),
        ({"spec": [{"kind": "prevalence"}], "values": [0.1, 0.2]}, "2 target values"),
        ({"spec": [{"feature": "a"}], "values": [1]}, "'kind'"),
    ])
    def test_json_errors(self, tmp_path, obj, fragment):
        path = tmp_path / "s.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(DataError, match=fragment):
            load_stats_json(path)


class TestConvertReported:
    def test_zero_variance(self):
        spec = TransformSpec((Term("perClassMean", "a", 1), Term("perClassSecondMoment", "a", 1)))
        t = convert_reported_stats([ReportedStat("a", 1, 1.0, 0.0)], 0.5, spec)
        np.testing.assert_allclose(t.values, [0.5, 0.5])

    def test_second_moment_against_generated_sample(self):
        # class-0 rows with mean exactly 2 and population variance exactly 1, 25% prevalence
        x0 = np.array([1.0, 3.0, 1.0, 3.0, 1.0, 3.0])
        x1 = np.array([7.0, 9.0])
        s = Sample(np.concatenate([x1, x0])[:, None], [1, 1] + [0] * 6, ("a",))
        spec = TransformSpec((Term("perClassSecondMoment", "a", 0),))
        converted = convert_reported_stats([ReportedStat("a", 0, 2.0, 1.0)], 0.25, spec)
        assert converted.values[0] == pytest.approx(3.75, abs=1e-15)
        assert stats_from_sample(s, spec).values[0] == pytest.approx(3.75, abs=1e-15)

    @pytest.mark.parametrize("prevalence", [0.0, 1.0, -0.1])
    def test_prevalence_precondition(self, prevalence):
        with pytest.raises(DataError, match="prevalence"):
            convert_reported_stats([], prevalence, TransformSpec((Term("prevalence"),)))

    def test_missing_entry(self):
        spec = TransformSpec((Term("perClassMean", "a", 0),))
        with pytest.raises(DataError, match="feature 'a', class 0"):
            convert_reported_stats([ReportedStat("a", 1, 0.0, 1.0)], 0.5, spec)

    def test_bessel_factor(self):
        spec = TransformSpec((Term("perClassSecondMoment", "a", 1),))
        t = convert_reported_stats([ReportedStat("a", 1, 0.0, 2.0)], 0.5, spec, n_external=10, sample_variance=True)
        assert t.values[0] == pytest.approx(2.0 * 4 / 5 * 0.5)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 300), p=st.integers(1, 4))
    def test_consistent_with_sample_statistics(self, seed, n, p):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, p)) * rng.uniform(0.1, 10, size=p) + rng.normal(size=p) * 5
        y = rng.integers(0, 2, size=n)
        y[:2] = (0, 1)
        s = Sample(x, y, tuple(f"f{j}" for j in range(p)))
        spec = TransformSpec(TransformSpec.class_moments(s.feature_names).terms + (Term("marginalMean", "f0"),))
        report, prevalence = class_statistics(s)
        np.testing.assert_allclose(
            convert_reported_stats(report, prevalence, spec).values,
            stats_from_sample(s, spec).values,
            rtol=1e-12, atol=1e-12,
        )


class TestPruning:
    def _problem(self):
        terms = (Term("marginalMean", "a"), Term("marginalMean", "b"))
        rng = np.random.default_rng(3)
        col = rng.normal(0, 0.5, 10)
        z = TransformedMatrix(np.column_stack([np.full(10, 2.0), col]), terms)
        return z, MomentTarget([2.0, col.mean() + 0.1], terms)

    def test_constant_column_pruned(self):
        z, t = self._problem()
        res = prune_low_variance_columns(z, t, 1e-4)
        assert res.pruned == (Term("marginalMean", "a"),)
        assert res.z.terms == (Term("marginalMean", "b"),)
        assert res.target.values[0] == t.values[1]

    def test_spread_column_kept(self):
        terms = (Term("marginalMean", "a"),)
        z = TransformedMatrix(np.array([[0.0], [1.0]]) * 0.5 * np.sqrt(2), terms)
        res = prune_low_variance_columns(z, MomentTarget([0.3], terms), 1e-4)
        assert res.pruned == ()

    def test_all_pruned(self):
        terms = (Term("marginalMean", "a"),)
        z = TransformedMatrix(np.ones((4, 1)), terms)
        with pytest.raises(DataError, match="no usable constraints"):
            prune_low_variance_columns(z, MomentTarget([1.0], terms), 1e-4)

    def test_pruned_solve_matches_original(self):
        z, t = self._problem()
        res = prune_low_variance_columns(z, t, 1e-4)
        direct = solve(z, t)
        pruned = solve(res.z, res.target)
        assert direct.status.value == pruned.status.value == "Exact"
        np.testing.assert_allclose(direct.weights, pruned.weights, atol=1e-10)
