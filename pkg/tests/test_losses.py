import math

import numpy as np
import pytest
import torch

from flowcast.data import PeriodMasks
from flowcast.losses import (EvaluationReport, LossConfig, epel, evaluate,
                             mae, mse, quantile_loss)


class TestMaeMse:
    def test_zero_error(self):
        y = torch.rand(10, dtype=torch.float64)
        assert float(mae(y, y)) == 0.0
        assert float(mse(y, y)) == 0.0

    def test_hand_values(self):
        assert float(mae([0.0, 1.0], [1.0, 0.0])) == 1.0
        assert float(mse([0.0, 1.0], [1.0, 0.0])) == 1.0

    def test_jensen_equality_for_constant_errors(self):
        y = torch.zeros(8, dtype=torch.float64)
        pred = torch.full((8,), 0.3, dtype=torch.float64)
        assert float(mse(y, pred)) == pytest.approx(float(mae(y, pred)) ** 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae(torch.zeros(3), torch.zeros(4))


class TestQuantile:
    def test_zero_at_perfect(self):
        y = torch.rand(6, dtype=torch.float64)
        assert float(quantile_loss(y, y, 0.3)) == 0.0

    def test_median_is_half_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            y = rng.normal(size=17)
            pred = rng.normal(size=17)
            lhs = float(quantile_loss(y, pred, 0.5))
            rhs = 0.5 * float(mae(y, pred))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_single_branch(self):
        assert float(quantile_loss([1.0], [0.0], 0.9)) == pytest.approx(0.1)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        y, pred = rng.normal(size=50), rng.normal(size=50)
        for tau in (0.1, 0.5, 0.9):
            assert float(quantile_loss(y, pred, tau)) >= 0.0

    def test_tau_bounds(self):
        with pytest.raises(ValueError):
            quantile_loss([1.0], [0.0], 0.0)
        with pytest.raises(ValueError):
            LossConfig(kind="quantile", tau=1.0)


class TestEpel:
    def test_exact_values(self):
        assert float(epel([0.0], [0.0])) == pytest.approx(1.0, abs=1e-9)
        assert float(epel([1.0], [1.0])) == pytest.approx(math.exp(2.0), abs=1e-9)
        assert float(epel([0.5], [0.3])) == pytest.approx(math.exp(1.2), abs=1e-9)

    def test_lower_bound_attained_only_at_zero_error(self):
        rng = np.random.default_rng(2)
        y = rng.uniform(0, 1, 40)
        pred = y + rng.normal(0, 0.1, 40)
        values = np.exp(2 * y) * np.exp(np.abs(y - pred))
        assert float(epel(y, pred)) == pytest.approx(values.mean(), rel=1e-12)
        assert np.all(values >= np.exp(2 * y))
        assert float(epel(y, y)) == pytest.approx(np.exp(2 * y).mean(), rel=1e-12)

    def test_peak_sensitivity_factor(self):
        # Equal |error| at two truth levels: contribution ratio is exactly
        # exp(p * (y1 - y2)).
        p, q, err = 2.0, 1.0, 0.15
        y1, y2 = 0.9, 0.4
        c1 = float(epel([y1], [y1 - err], p, q))
        c2 = float(epel([y2], [y2 - err], p, q))
        assert c1 / c2 == pytest.approx(math.exp(p * (y1 - y2)), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        y = torch.from_numpy(rng.uniform(0, 1, 12))
        pred = torch.from_numpy(rng.uniform(0, 1, 12)).requires_grad_(True)
        loss = epel(y, pred)
        loss.backward()
        step = 1e-7
        for i in range(12):
            with torch.no_grad():
                up = pred.clone(); up[i] += step
                down = pred.clone(); down[i] -= step
                numeric = (float(epel(y, up)) - float(epel(y, down))) / (2 * step)
            assert float(pred.grad[i]) == pytest.approx(numeric, rel=1e-6)

    def test_subgradient_zero_at_equality(self):
        y = torch.tensor([0.4], dtype=torch.float64)
        pred = y.clone().requires_grad_(True)
        epel(y, pred).backward()
        assert float(pred.grad[0]) == 0.0


class TestLossConfig:
    def test_known_kinds(self):
        for kind in ("mae", "mse", "quantile", "epel"):
            fn = LossConfig(kind=kind).build()
            assert float(fn(torch.ones(3), torch.ones(3))) >= 0.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LossConfig(kind="huber")

    def test_positive_exponents(self):
        with pytest.raises(ValueError):
            LossConfig(p=0.0)


def _masks(steps, evening=None, weekend=None, holiday=None):
    def build(sel):
        mask = np.zeros(steps, dtype=bool)
        if sel is not None:
            mask[sel] = True
        return mask
    return PeriodMasks(build(evening), build(weekend), build(holiday))


class TestEvaluate:
    def test_perfect_prediction(self):
        pred = np.random.default_rng(0).uniform(0, 1, (5, 2, 3))
        steps = np.arange(10).reshape(5, 2)
        report = evaluate(pred, pred, steps, _masks(10, evening=[0, 1]))
        for metrics in report.periods.values():
            assert metrics.mse in (0.0, None)
        assert report.periods["entire"].mse == 0.0

    def test_masked_average_split(self):
        # Error 1 on masked half, 0 elsewhere: entire mae 0.5, masked mae 1.
        truth = np.zeros((4, 1, 1))
        pred = truth.copy()
        pred[[0, 1]] = 1.0
        steps = np.arange(4).reshape(4, 1)
        report = evaluate(pred, truth, steps, _masks(4, evening=[0, 1]))
        assert report.periods["entire"].mae == pytest.approx(0.5)
        assert report.periods["evening"].mae == pytest.approx(1.0)
        assert report.periods["evening"].count == 2

    def test_evening_count_rule(self):
        # Count = masked steps in the span: 4 per full day.
        import pandas as pd
        from flowcast.data import build_period_masks
        stamps = pd.date_range("2023-03-01", periods=3 * 24, freq="h")
        masks = build_period_masks(stamps)
        pred = np.zeros((10, 1, 1))
        steps = np.arange(10).reshape(10, 1)
        report = evaluate(pred, pred, steps, masks)
        assert report.periods["evening"].count == 3 * 4

    def test_empty_mask_reports_count_zero_without_metrics(self):
        pred = np.zeros((3, 1, 1))
        steps = np.arange(3).reshape(3, 1)
        report = evaluate(pred, pred + 1.0, steps, _masks(3))
        holiday = report.periods["holiday"]
        assert holiday.count == 0
        assert holiday.mse is None and holiday.mae is None

    def test_denormalized_metrics(self):
        truth = np.zeros((2, 1, 2))
        pred = truth.copy()
        pred[..., 0] = 0.5
        steps = np.arange(2).reshape(2, 1)
        report = evaluate(pred, truth, steps, _masks(2), spread=np.array([10.0, 2.0]))
        assert report.periods["entire"].mae == pytest.approx(0.25)
        assert report.periods["entire"].mae_denorm == pytest.approx(2.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((2, 1, 1)), np.zeros((3, 1, 1)),
                     np.arange(2).reshape(2, 1), _masks(3))

    def test_report_serialization_roundtrip(self, tmp_path):
        truth = np.zeros((4, 2, 3))
        pred = truth + 0.1
        steps = np.arange(8).reshape(4, 2)
        report = evaluate(pred, truth, steps, _masks(8, evening=[1], weekend=[2]))
        json_path = tmp_path / "report.json"
        text_path = tmp_path / "report.txt"
        report.save(json_path, text_path)
        again = EvaluationReport.load(json_path)
        assert again.to_dict() == report.to_dict()
        text = text_path.read_text()
        assert "entire.mse" in text and "holiday.count" in text
