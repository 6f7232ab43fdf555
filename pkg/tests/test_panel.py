import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portsel.panel import (PanelError, PanelParseError, PanelSchemaError,
                           PredictorSpec, classify_predictor, expand_predictors,
                           load_panel, standardize_and_impute,
                           winsorize_cross_section)

from oracles import quantile_linear


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def tiny_csv(tmp_path):
    return write_csv(tmp_path / "panel.csv", (
        "date,id,ret_fwd,alpha\n"
        "200001,A,0.01,1.0\n"
        "200001,B,0.02,2.0\n"
        "200001,C,0.03,3.0\n"
    ))


class TestLoadPanel:
    def test_identity_ingestion(self, tiny_csv):
        panel = load_panel(tiny_csv)
        assert panel.months == [200001]
        assert panel.char_names == ["alpha"]
        block = panel.blocks[200001]
        assert block.firm_ids == ("A", "B", "C")
        np.testing.assert_allclose(block.values[:, 0], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(block.ret_fwd, [0.01, 0.02, 0.03])
        assert panel.dropped_rows == 0

    def test_missing_return_dropped_and_counted(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", (
            "date,id,ret_fwd,alpha\n"
            "200001,A,0.01,1.0\n"
            "200001,B,,2.0\n"
        ))
        panel = load_panel(path)
        assert panel.dropped_rows == 1
        assert panel.blocks[200001].firm_ids == ("A",)

    def test_duplicate_month_firm_is_error(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", (
            "date,id,ret_fwd,alpha\n"
            "200001,A,0.01,1.0\n"
            "200001,A,0.02,2.0\n"
        ))
        with pytest.raises(PanelError, match=r"200001.*A"):
            load_panel(path)

    def test_missing_mandatory_column(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", "date,id,alpha\n200001,A,1.0\n")
        with pytest.raises(PanelSchemaError, match="ret_fwd"):
            load_panel(path)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", (
            "date,id,ret_fwd,alpha\n"
            "200001,A,0.01,1.0\n"
            "200001,B,0.02,oops\n"
        ))
        with pytest.raises(PanelParseError, match=r"p\.csv:3"):
            load_panel(path)

    def test_schema_remap(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", (
            "month,permno,fwd,alpha\n200001,A,0.01,1.0\n200002,A,0.00,2.0\n"
        ))
        panel = load_panel(path, schema={"date": "month", "id": "permno",
                                         "ret_fwd": "fwd"})
        assert panel.months == [200001, 200002]

    def test_binary_flag_validated(self, tmp_path):
        csv = write_csv(tmp_path / "p.csv", (
            "date,id,ret_fwd,flag\n200001,A,0.01,0\n200001,B,0.02,2\n"
        ))
        meta = write_csv(tmp_path / "meta.txt", "binary = flag\n")
        with pytest.raises(PanelError, match="flag"):
            load_panel(csv, metadata_path=meta)

    def test_months_sorted_strictly_increasing(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", (
            "date,id,ret_fwd,alpha\n"
            "200003,A,0.01,1.0\n200001,A,0.0,2.0\n200002,A,0.0,3.0\n"
        ))
        panel = load_panel(path)
        assert panel.months == sorted(panel.months)
        assert len(set(panel.months)) == len(panel.months)


class TestWinsorize:
    def make_panel(self, tmp_path, values, binary=False):
        rows = "".join(f"200001,F{i:03d},0.01,{v}\n" for i, v in enumerate(values))
        csv = write_csv(tmp_path / "p.csv", "date,id,ret_fwd,alpha\n" + rows)
        meta = None
        if binary:
            meta = write_csv(tmp_path / "meta.txt", "binary = alpha\n")
        return load_panel(csv, metadata_path=meta)

    def test_hundred_point_clip(self, tmp_path):
        values = np.arange(1.0, 101.0)
        panel = winsorize_cross_section(self.make_panel(tmp_path, values))
        col = panel.blocks[200001].values[:, 0]
        lo = quantile_linear(values, 0.01)
        hi = quantile_linear(values, 0.99)
        assert lo == pytest.approx(1.99)
        assert hi == pytest.approx(99.01)
        assert col.min() == pytest.approx(lo)
        assert col.max() == pytest.approx(hi)
        inner = (values > lo) & (values < hi)
        np.testing.assert_allclose(col[inner], values[inner])

    def test_all_equal_unchanged(self, tmp_path):
        panel = winsorize_cross_section(self.make_panel(tmp_path, [5.0] * 10))
        np.testing.assert_allclose(panel.blocks[200001].values[:, 0], 5.0)

    def test_binary_untouched(self, tmp_path):
        values = [0.0, 1.0] * 50
        panel = winsorize_cross_section(self.make_panel(tmp_path, values, binary=True))
        np.testing.assert_array_equal(panel.blocks[200001].values[:, 0], values)

    def test_single_observation_passes_through(self, tmp_path):
        panel = winsorize_cross_section(self.make_panel(tmp_path, [42.0]))
        assert panel.blocks[200001].values[0, 0] == 42.0

    def test_bad_limits(self, tmp_path):
        panel = self.make_panel(tmp_path, [1.0, 2.0])
        with pytest.raises(ValueError):
            winsorize_cross_section(panel, 0.5, 0.5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=3), st.integers(min_value=0, max_value=10_000))
    def test_idempotent_at_aligned_sizes(self, hundreds, seed):
        # linear-rule winsorization is exactly idempotent when the quantile
        # positions (n-1)*p land on order statistics: n = 100*k + 1
        from portsel.panel import CharacteristicsPanel, MonthBlock
        n = 100 * hundreds + 1
        rng = np.random.default_rng(seed)
        values = rng.standard_normal(n) * 10
        block = MonthBlock(firm_ids=tuple(f"F{i}" for i in range(n)),
                           values=values.reshape(-1, 1),
                           ret_fwd=np.zeros(n))
        panel = CharacteristicsPanel(char_names=["alpha"], months=[200001],
                                     blocks={200001: block})
        once = winsorize_cross_section(panel)
        twice = winsorize_cross_section(once)
        np.testing.assert_array_equal(once.blocks[200001].values,
                                      twice.blocks[200001].values)


class TestExpandPredictors:
    def test_paper_scale_counts(self):
        bases = tuple(f"ch{i:03d}" for i in range(95))
        sq_excl = frozenset(bases[:7])  # 6 binaries + the pre-squared one
        spec = PredictorSpec(base_names=bases, square_exclusions=sq_excl)
        names = expand_predictors(spec)
        assert len(names) == 95 + 88 + 95 * 94 // 2
        assert len(names) == 4648

    def test_interaction_exclusions_reach_4610(self):
        bases = tuple(f"ch{i:03d}" for i in range(95))
        sq_excl = frozenset(bases[:7])
        pairs = frozenset((bases[i], bases[i + 1]) for i in range(38))
        spec = PredictorSpec(base_names=bases, square_exclusions=sq_excl,
                             interaction_exclusions=pairs)
        names = expand_predictors(spec)
        assert len(names) == 4610

    def test_smallest_nondegenerate(self):
        spec = PredictorSpec(base_names=("a", "b"))
        assert expand_predictors(spec) == ["a", "b", "a_sq", "b_sq", "a_x_b"]

    def test_ordering_and_canonicalization(self):
        spec = PredictorSpec(base_names=("z", "a", "m"))
        names = expand_predictors(spec)
        assert names[:3] == ["z", "a", "m"]          # bases keep given order
        assert names[3:6] == ["z_sq", "a_sq", "m_sq"]
        assert names[6:] == ["a_x_m", "a_x_z", "m_x_z"]  # pairs lexicographic

    def test_base_name_collision_rejected(self):
        with pytest.raises(PanelSchemaError):
            PredictorSpec(base_names=("a", "b_sq"))
        with pytest.raises(PanelSchemaError):
            PredictorSpec(base_names=("a_x_b",))

    def test_classify(self):
        assert classify_predictor("beta") == "main"
        assert classify_predictor("beta_sq") == "square"
        assert classify_predictor("a_x_b") == "interaction"

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_count_formula_property(self, data):
        n = data.draw(st.integers(min_value=1, max_value=12))
        bases = tuple(f"v{i}" for i in range(n))
        sq_excl = frozenset(data.draw(st.sets(st.sampled_from(bases))))
        all_pairs = [(a, b) for i, a in enumerate(sorted(bases))
                     for b in sorted(bases)[i + 1:]]
        ix_excl = frozenset(data.draw(st.sets(st.sampled_from(all_pairs)))) if all_pairs else frozenset()
        spec = PredictorSpec(base_names=bases, square_exclusions=sq_excl,
                             interaction_exclusions=ix_excl)
        names = expand_predictors(spec)
        expected = n + (n - len(sq_excl & set(bases))) + (len(all_pairs) - len(ix_excl))
        assert len(names) == expected
        assert len(set(names)) == len(names)


class TestStandardize:
    def make_panel(self, tmp_path, rows, chars=("alpha",), meta=None):
        header = "date,id,ret_fwd," + ",".join(chars) + "\n"
        csv = write_csv(tmp_path / "p.csv", header + rows)
        meta_path = write_csv(tmp_path / "meta.txt", meta) if meta else None
        return load_panel(csv, metadata_path=meta_path)

    def test_three_firm_values(self, tmp_path):
        # (-1, 0, 1): sample sd (n-1) is exactly 1, so standardization fixes it
        panel = self.make_panel(tmp_path, (
            "200001,A,0.01,-1\n200001,B,0.01,0\n200001,C,0.01,1\n"
        ))
        spec = PredictorSpec(base_names=("alpha",), include_squares=False,
                             include_interactions=False)
        X = standardize_and_impute(panel, 200001, spec)
        np.testing.assert_allclose(X.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-14)

    def test_missing_cell_sits_at_mean(self, tmp_path):
        panel = self.make_panel(tmp_path, (
            "200001,A,0.01,-1\n200001,B,0.01,\n200001,C,0.01,1\n200001,D,0.01,3\n"
        ))
        spec = PredictorSpec(base_names=("alpha",), include_squares=False,
                             include_interactions=False)
        X = standardize_and_impute(panel, 200001, spec)
        assert X.values[1, 0] == 0.0
        assert abs(X.values[:, 0].mean()) < 1e-10
        assert abs(X.values[:, 0].std(ddof=1) - 1.0) < 1e-8

    def test_interaction_column_standardized(self, tmp_path):
        rng = np.random.default_rng(7)
        rows = "".join(
            f"200001,F{i:02d},0.01,{rng.normal():.10f},{rng.normal():.10f}\n"
            for i in range(20)
        )
        panel = self.make_panel(tmp_path, rows, chars=("a", "b"))
        spec = PredictorSpec(base_names=("a", "b"))
        X = standardize_and_impute(panel, 200001, spec)
        k = list(X.predictor_names).index("a_x_b")
        col = X.values[:, k]
        assert abs(col.mean()) < 1e-10
        assert abs(col.std(ddof=1) - 1.0) < 1e-8
        # interaction equals standardize(a_std * b_std)
        a = X.values[:, 0]
        b = X.values[:, 1]
        prod = a * b
        expected = (prod - prod.mean()) / prod.std(ddof=1)
        np.testing.assert_allclose(col, expected, atol=1e-12)

    def test_degenerate_column_all_zero_and_flagged(self, tmp_path):
        panel = self.make_panel(tmp_path, (
            "200001,A,0.01,5\n200001,B,0.01,5\n200001,C,0.01,5\n"
        ))
        spec = PredictorSpec(base_names=("alpha",))
        X = standardize_and_impute(panel, 200001, spec)
        assert X.degenerate.all()
        np.testing.assert_array_equal(X.values, 0.0)

    def test_every_column_mean_zero_sd_one(self, tmp_path):
        rng = np.random.default_rng(11)
        rows = []
        for i in range(40):
            a = f"{rng.normal():.8f}" if rng.random() > 0.1 else ""
            b = f"{rng.normal():.8f}"
            c = f"{int(rng.random() < 0.5)}"
            rows.append(f"200001,F{i:03d},0.01,{a},{b},{c}\n")
        panel = self.make_panel(tmp_path, "".join(rows), chars=("a", "b", "flag"),
                                meta="binary = flag\n")
        spec = PredictorSpec.from_panel(panel)
        X = standardize_and_impute(panel, 200001, spec)
        for k in range(X.n_predictors):
            col = X.values[:, k]
            if X.degenerate[k]:
                np.testing.assert_array_equal(col, 0.0)
                continue
            assert abs(col.mean()) < 1e-10, X.predictor_names[k]
            assert abs(col.std(ddof=1) - 1.0) < 1e-8, X.predictor_names[k]
        assert np.isfinite(X.values).all()

    def test_binary_square_excluded_via_from_panel(self, tmp_path):
        panel = self.make_panel(tmp_path, (
            "200001,A,0.01,1,1\n200001,B,0.01,2,0\n200001,C,0.01,3,1\n"
        ), chars=("a", "flag"), meta="binary = flag\n")
        spec = PredictorSpec.from_panel(panel)
        names = expand_predictors(spec)
        assert "flag_sq" not in names
        assert "a_sq" in names

    def test_unknown_month_raises(self, tmp_path):
        panel = self.make_panel(tmp_path, "200001,A,0.01,1\n200001,B,0.01,2\n")
        spec = PredictorSpec(base_names=("alpha",))
        with pytest.raises(PanelError):
            standardize_and_impute(panel, 999912, spec)
