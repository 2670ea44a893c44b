"""Report rendering, plots, and the append-only run ledger."""

import fcntl
import json
import os
import tempfile
import time


def atomic_write_text(text, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_report(payload, path):
    atomic_write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", path)


def append_run_record(ledger_path, record):
    """Append one RunRecord under an exclusive lock; ledger is append-only."""
    os.makedirs(os.path.dirname(os.path.abspath(ledger_path)), exist_ok=True)
    line = json.dumps(record, sort_keys=True) + "\n"
    with open(ledger_path, "a") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            fh.write(line)
            fh.flush()
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def read_run_records(ledger_path):
    if not os.path.exists(ledger_path):
        return []
    with open(ledger_path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def make_run_record(config, command, artifacts, wall_clock, status="ok"):
    import platform

    from . import __version__

    return {
        "experiment_id": config["experiment_id"],
        "config_hash": config.hash(),
        "command": command,
        "provenance": f"gandet-{__version__}/{platform.system().lower()}",
        "artifacts": sorted(artifacts),
        "wall_clock": round(wall_clock, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "status": status,
    }


def _fmt(value, width=10):
    if value is None:
        return "-".rjust(width)
    if isinstance(value, float):
        return f"{100 * value:.2f}".rjust(width)
    return str(value).rjust(width)


def render_table(title, col_names, rows, meta):
    """Plain-text table; mAP cells are percentages, first column is a label."""
    label_w = max([len(str(r[0])) for r in rows] + [len("row"), 12])
    lines = [title]
    lines.append(f"config_hash: {meta.get('config_hash', '?')}")
    for key, val in meta.items():
        if key.startswith("checkpoint_"):
            lines.append(f"{key}: {val}")
    header = "row".ljust(label_w) + "".join(_fmt(c) if not isinstance(c, str) else c.rjust(10)
                                            for c in col_names)
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        lines.append(str(row[0]).ljust(label_w) + "".join(_fmt(v) for v in row[1:]))
    return "\n".join(lines) + "\n"


def plot_sweep(sweep_by_model, path, title="mAP vs blur level"):
    """Line plot of mAP against blur radius for each model."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=120)
    for name, sweep in sweep_by_model.items():
        levels = sorted(sweep)
        ax.plot(levels, [100 * (sweep[l] if sweep[l] is not None else 0) for l in levels],
                marker="o", label=name)
    ax.set_xlabel("blur radius (px)")
    ax.set_ylabel("mAP (%)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=os.path.dirname(os.path.abspath(path)))
    os.close(fd)
    try:
        fig.savefig(tmp)
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
