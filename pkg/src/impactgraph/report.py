"""Family x target evaluation grid and its JSON / table renderings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SplitMasks
from .estimator import GraphRegressor
from .models import DISPLAY_NAMES, FAMILIES
from .training import regression_metrics


@dataclass
class MetricsReport:
    """Rows of ``{family, target, split, n, mse, mae, r2}``."""

    rows: list = field(default_factory=list)

    def add(self, family, target, split, metrics, n):
        self.rows.append({"family": family, "target": target, "split": split, "n": int(n), **metrics})

    def get(self, family, target, split="test") -> dict:
        for r in self.rows:
            if (r["family"], r["target"], r["split"]) == (family, target, split):
                return r
        raise KeyError((family, target, split))

    def test_rows(self) -> list:
        return [r for r in self.rows if r["split"] == "test"]

    def to_dict(self) -> dict:
        return {"rows": self.rows}

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(list(d["rows"]))

    def save(self, json_path, table_path=None):
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        if table_path is not None:
            Path(table_path).write_text(self.format_table(), encoding="utf-8")

    def format_table(self, split="test") -> str:
        """One block per target: ``Algorithm  MSE  MAE  R^2``."""
        lines = []
        targets = list(dict.fromkeys(r["target"] for r in self.rows if r["split"] == split))
        for target in targets:
            lines.append(f"Prediction performance for {target} ({split})")
            lines.append(f"{'Algorithm':<14}{'MSE':>16}{'MAE':>14}{'R^2':>10}")
            for r in self.rows:
                if r["target"] == target and r["split"] == split:
                    name = DISPLAY_NAMES.get(r["family"], r["family"])
                    lines.append(f"{name:<14}{r['mse']:>16.6f}{r['mae']:>14.6f}{r['r2']:>10.4f}")
            lines.append("")
        return "\n".join(lines)


def target_masks(y, masks: SplitMasks):
    """Split masks restricted to rows where the target is present."""
    present = np.isfinite(y)
    return masks.train_mask & present, masks.test_mask & present


def evaluate_suite(X, Y, masks: SplitMasks, families=FAMILIES, targets=None, configs=None, callback=None):
    """Fit every (family, target) pair and score it on the test mask.

    ``configs`` maps a family name to extra :class:`GraphRegressor` keyword
    arguments (key ``"*"`` applies to all). Test-row targets are replaced
    by NaN before fitting, so they cannot leak into training.

    Returns ``(report, estimators)`` with estimators keyed by ``(family, target)``.
    """
    configs = configs or {}
    targets = list(Y) if targets is None else list(targets)
    report = MetricsReport()
    fitted = {}
    for target in targets:
        y = np.asarray(Y[target], dtype=np.float64)
        train, test = target_masks(y, masks)
        for family in families:
            kwargs = {**configs.get("*", {}), **configs.get(family, {})}
            est = GraphRegressor(family=family, target_name=target, **kwargs)
            est.fit(X, np.where(train, y, np.nan), train_mask=train)
            pred = est.predict_nodes()
            report.add(family, target, "test", regression_metrics(y, pred, test), test.sum())
            report.add(family, target, "train", regression_metrics(y, pred, train), train.sum())
            fitted[(family, target)] = est
            if callback is not None:
                callback(family, target, est)
    return report, fitted
