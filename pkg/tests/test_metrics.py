import csv
import io
import math

import numpy as np
import pytest

from conftest import centroid_x_model, gaussian_blob, three_class_model
from manifool.attack import AttackParams
from manifool.classifier import LabeledDataset, predict
from manifool.errors import AllFailed, EmptyDataset
from manifool.geodesic import normalized_score
from manifool.image import warp
from manifool.metrics import (
    CURVE_HEADER,
    EVAL_HEADER,
    RobustnessCurve,
    grid_step_score,
    invariance_score,
    misclassification_curve,
    oracle_min_translation,
    r_hat,
)
from manifool.transforms import Transform, TransformGroup


def blob_dataset(xs, label=0):
    return LabeledDataset([gaussian_blob(cx=x, sigma=2.0) for x in xs], [label] * len(xs))


def curve(grid, rates, samples=10):
    flips = np.round(np.asarray(rates) * samples).astype(int)
    n = len(grid)
    return RobustnessCurve(np.asarray(grid, float), flips, np.full(n, samples), np.zeros(n, int),
                           samples)


class TestInvarianceScore:
    model = centroid_x_model()

    def test_all_misclassified(self):
        report = invariance_score(blob_dataset([-2.0, -3.0], label=1), self.model,
                                  TransformGroup.TRANSLATION)
        assert report.rho_hat == 0.0 and report.failure_count == 0

    def test_single_image(self):
        data = blob_dataset([-2.5])
        report = invariance_score(data, self.model, TransformGroup.TRANSLATION)
        rec = report.per_image[0]
        assert rec.success and report.rho_hat == rec.score
        assert rec.score == normalized_score(data.images[0], rec.tau,
                                             group=TransformGroup.TRANSLATION)

    def test_mean_of_successes(self):
        data = blob_dataset([-1.5, -2.5, -3.5])
        report = invariance_score(data, self.model, TransformGroup.SIMILARITY)
        assert report.rho_hat == np.mean([r.score for r in report.successes()])
        assert report.failure_count == sum(not r.success for r in report.per_image)

    def test_all_failed(self):
        with pytest.raises(AllFailed):
            invariance_score(blob_dataset([-2.5]), self.model, TransformGroup.TRANSLATION,
                             AttackParams(max_iters=0))

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            invariance_score(LabeledDataset([], []), self.model, TransformGroup.TRANSLATION)

    def test_csv(self):
        report = invariance_score(blob_dataset([-2.5, -3.0]), self.model,
                                  TransformGroup.TRANSLATION)
        rows = list(csv.reader(io.StringIO(report.to_csv())))
        assert rows[0] == EVAL_HEADER and len(rows) == 3
        assert float(rows[1][3]) == report.per_image[0].score
        assert Transform.from_line(rows[1][6]) == report.per_image[0].tau

    def test_jobs_do_not_change_result(self):
        data = blob_dataset([-1.5, -2.5, -3.5, -2.0])
        a = invariance_score(data, self.model, TransformGroup.SIMILARITY, jobs=1)
        b = invariance_score(data, self.model, TransformGroup.SIMILARITY, jobs=2)
        assert a.to_csv() == b.to_csv() and a.rho_hat == b.rho_hat


class TestRHat:
    def test_interpolation(self):
        assert r_hat(curve([1.0, 2.0], [0.2, 0.6])) == pytest.approx(1.75)

    def test_never_reached(self):
        assert r_hat(curve([1.0, 2.0, 3.0], [0.1, 0.2, 0.4])) is None

    def test_first_point(self):
        assert r_hat(curve([0.5, 1.0], [0.7, 0.9])) == 0.5

    def test_exact_threshold(self):
        assert r_hat(curve([1.0, 2.0, 3.0], [0.1, 0.5, 0.9])) == 2.0

    def test_skips_empty_points(self):
        c = curve([1.0, 2.0, 3.0], [0.2, 0.0, 0.8])
        c.valid[1] = 0
        assert r_hat(c) == pytest.approx(1.0 + 2.0 * 0.3 / 0.6)


class TestCurve:
    model = centroid_x_model()
    data = blob_dataset([-2.5, -3.0, -2.0])
    grid = [1e-4, 0.2, 0.5, 1.0, 2.0]

    def test_counts_and_rates(self):
        c = misclassification_curve(self.data, self.model, TransformGroup.SIMILARITY, self.grid,
                                    reps_per_image=4, seed=3)
        rates = c.misclassification_rate
        assert np.all((rates >= 0) & (rates <= 1))
        assert np.array_equal(rates * c.valid, c.flips.astype(float))
        assert np.all(c.valid + c.bracket_failures == 12)
        assert rates[0] == 0.0

    def test_csv_rows(self):
        c = misclassification_curve(self.data, self.model, TransformGroup.TRANSLATION, self.grid,
                                    reps_per_image=2)
        rows = list(csv.reader(io.StringIO(c.to_csv())))
        assert rows[0] == CURVE_HEADER and len(rows) == 1 + len(self.grid)
        assert {r[5] for r in rows[1:]} == {"undefined" if c.r_hat is None else repr(c.r_hat)}

    def test_deterministic_and_jobs_independent(self):
        a = misclassification_curve(self.data, self.model, TransformGroup.AFFINE, self.grid,
                                    reps_per_image=3, seed=8)
        b = misclassification_curve(self.data, self.model, TransformGroup.AFFINE, self.grid,
                                    reps_per_image=3, seed=8, jobs=2)
        assert a.to_csv() == b.to_csv()

    @pytest.mark.parametrize("grid", [[], [0.5, 0.2], [0.0, 1.0]])
    def test_bad_grid(self, grid):
        with pytest.raises(ValueError):
            misclassification_curve(self.data, self.model, TransformGroup.TRANSLATION, grid)


def brute_force_translation(img, model, radius, step):
    base = predict(model, img)
    best = (math.inf, None)
    n = int(radius / step)
    for i in range(-n, n + 1):
        for j in range(-n, n + 1):
            t = Transform.translation(i * step, j * step)
            if (i, j) != (0, 0) and predict(model, warp(img, t)) != base:
                best = min(best, (normalized_score(img, t, group=TransformGroup.TRANSLATION),
                                  (i, j)))
    return best


class TestOracle:
    def test_misclassified(self):
        res = oracle_min_translation(gaussian_blob(cx=-2.0), centroid_x_model(), label=1)
        assert res == (Transform.identity(), 0.0)

    def test_no_flip(self):
        img = gaussian_blob(cx=-8.0, sigma=2.0)
        assert oracle_min_translation(img, centroid_x_model(), search_radius=3) is None

    @pytest.mark.parametrize("model,img", [
        (centroid_x_model(), gaussian_blob(cx=-2.5, sigma=2.0)),
        (three_class_model(), gaussian_blob(sigma=2.0)),
    ])
    def test_matches_unpruned_scan(self, model, img):
        t, score = oracle_min_translation(img, model, search_radius=5, grid_step=1)
        expected, _ = brute_force_translation(img, model, 5, 1)
        assert score == expected
        assert predict(model, warp(img, t)) != predict(model, img)

    def test_grid_step_score(self, blob):
        s = grid_step_score(blob, 1.0)
        assert s == max(normalized_score(blob, Transform.translation(1, 0)),
                        normalized_score(blob, Transform.translation(0, 1)))
