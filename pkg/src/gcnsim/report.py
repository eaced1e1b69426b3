"""Write a run's metrics to disk: JSON summary, CSV ledgers, JSON-lines logs and figures."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .errors import IoError  # noqa: E402

SLOT_COLUMNS = ("slot", "sigma", "on_grid", "mean_delay_ms", "max_delay_ms", "d2a_bytes",
                "sync_bytes", "migration_bytes", "migration_count", "reassociation_count",
                "data_loss_count", "delay_violations", "active", "available")


def _num(x):
    return repr(x) if isinstance(x, float) else x


def _jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _slot_rows(report):
    for m in report.slots:
        yield (m.slot, m.sigma, sum(m.on_grid.values()), m.mean_delay_ms, m.max_delay_ms,
               m.traffic.get("D2A", 0.0), m.traffic.get("A2A-sync", 0.0),
               m.traffic.get("A2A-migration", 0.0), m.migration_count, m.reassociation_count,
               m.data_loss_count, m.delay_violations, m.active, m.available)


def plot_report(report, fig_dir) -> list[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    slots = [m.slot for m in report.slots]
    gcs_ids = sorted(report.provision)
    written = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(slots, report.sigma_per_slot, marker="o")
    ax.set_xlabel("slot")
    ax.set_ylabel("spatial std of EDR")
    ax.grid(alpha=0.3)
    written.append(_save(fig, fig_dir / "sigma.png"))

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for g in gcs_ids:
        axes[0].plot(slots, [m.eta[g] for m in report.slots], marker="o", label=g)
        axes[1].plot(slots, [m.residual[g] for m in report.slots], marker="s", label=g)
    axes[0].set_ylabel("EDR")
    axes[1].set_ylabel("battery residual")
    for ax in axes:
        ax.set_xlabel("slot")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    written.append(_save(fig, fig_dir / "gcs.png"))

    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = [0.0] * len(slots)
    for kind in ("D2A", "A2A-sync", "A2A-migration"):
        vals = [m.traffic.get(kind, 0.0) for m in report.slots]
        ax.bar(slots, vals, bottom=bottom, label=kind)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xlabel("slot")
    ax.set_ylabel("bytes")
    ax.legend(fontsize=7)
    written.append(_save(fig, fig_dir / "traffic.png"))
    return written


def _save(fig, path):
    for ax in fig.axes:
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    # no timestamps or version strings, so the PNG bytes only depend on the data
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def emit_metrics(report, out_dir, figures: bool = True) -> list[Path]:
    """Write summary.json, ledger.csv, traffic.csv and events.jsonl (plus plans, slots, figures).

    Outputs are byte-identical for identical runs.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
        paths = [out / "summary.json", out / "ledger.csv", out / "traffic.csv",
                 out / "events.jsonl", out / "plans.jsonl", out / "slots.csv"]
        with open(paths[0], "w") as fh:
            json.dump(report.summary(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        report.ledger.write_csv(paths[1])
        report.traffic.write_csv(paths[2])
        _jsonl(paths[3], report.events)
        _jsonl(paths[4], report.plans)
        with open(paths[5], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SLOT_COLUMNS)
            for row in _slot_rows(report):
                w.writerow([_num(x) for x in row])
        if figures:
            paths.extend(plot_report(report, out / "figures"))
    except OSError as exc:
        raise IoError(f"cannot write metrics to {out}: {exc}") from exc
    return paths


def load_summary(out_dir) -> dict:
    path = Path(out_dir) / "summary.json"
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
