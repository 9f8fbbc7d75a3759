"""Run manifests, reception traces and metric CSV files.

Every output file starts with a comment line naming its schema version and
the manifest id of the run that produced it; a rerun with the same scenario
and seed yields byte-identical traces.
"""
from __future__ import annotations

import datetime
import hashlib
import json
import os

from . import __version__
from .channel import OK
from .metrics import MetricsAggregator

SCHEMA_VERSION = 1


def manifest_id(scenario_dict, seed, scheduler, horizon_s) -> str:
    blob = json.dumps({"scenario": scenario_dict, "seed": seed,
                       "scheduler": scheduler, "horizon_s": horizon_s,
                       "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class RunManifest:
    def __init__(self, scenario, seed, scheduler, out_dir):
        self.scenario = scenario.to_dict()
        self.seed = seed
        self.scheduler = scheduler
        self.horizon_s = scenario.horizon_s
        self.out_dir = out_dir
        self.outputs: list[str] = []
        self.started = datetime.datetime.now().isoformat(timespec="seconds")
        self.finished = None
        self.id = manifest_id(self.scenario, seed, scheduler, self.horizon_s)

    def add_output(self, path):
        self.outputs.append(os.path.basename(path))
        return path

    def write(self):
        self.finished = datetime.datetime.now().isoformat(timespec="seconds")
        data = {
            "schema_version": SCHEMA_VERSION,
            "manifest_id": self.id,
            "package_version": __version__,
            "scheduler": self.scheduler,
            "seed": self.seed,
            "horizon_s": self.horizon_s,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
            "scenario": self.scenario,
        }
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def prepare_out_dir(path):
    """Create the run directory; refuse to reuse a non-empty one."""
    os.makedirs(path, exist_ok=True)
    if os.listdir(path):
        raise FileExistsError(f"output directory {path} is not empty")
    return path


class TraceWriter:
    """Line-per-reception trace: t,msg,tx,rx,tb,class,sinr,distance."""

    def __init__(self, path, manifest_id=""):
        self.path = path
        self._fh = open(path, "w")
        self._fh.write(f"# docasim trace v{SCHEMA_VERSION} manifest={manifest_id}\n")
        self._fh.write("t_ms,msg,tx,rx,tb,class,sinr_db,distance_m\n")

    def write_batch(self, batch):
        from .channel import CLASS_NAMES
        t = batch.t_ms
        sinr = batch.sinr_db
        rows = []
        for i in range(len(batch)):
            s = "" if sinr is None else f"{sinr[i]:.2f}"
            rows.append(f"{t},{batch.msg[i]},{batch.tx[i]},{batch.rx[i]},"
                        f"{CLASS_NAMES[batch.cls[i]]},{s},{batch.dist[i]:.2f}")
        self._fh.write("\n".join(rows) + "\n" if rows else "")

    def close(self):
        self._fh.close()


def read_trace(path):
    """Trace rows as dicts; skips the schema header."""
    out = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# docasim trace"):
            raise ValueError(f"{path}: not a trace file")
        cols = fh.readline().strip().split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(cols, parts))
            row["t_ms"] = int(row["t_ms"])
            row["msg"] = int(row["msg"])
            row["tx"] = int(row["tx"])
            row["rx"] = int(row["rx"])
            row["distance_m"] = float(row["distance_m"])
            row["sinr_db"] = float(row["sinr_db"]) if row["sinr_db"] else None
            out.append(row)
    return out


def _open_csv(path, kind, manifest, header):
    fh = open(path, "w")
    fh.write(f"# docasim {kind} v{SCHEMA_VERSION} manifest={manifest}\n")
    fh.write(header + "\n")
    return fh


def write_metrics_csvs(out_dir, metrics: MetricsAggregator, manifest: RunManifest):
    mid = manifest.id
    paths = {}

    p = os.path.join(out_dir, "prr_by_bin.csv")
    with _open_csv(p, "prr_by_bin", mid, "bin_low_m,bin_high_m,prr_mean,prr_std,prr_pooled") as fh:
        for (lo, hi), (mean, std, pooled) in zip(metrics.cfg.prr_bins,
                                                 metrics.prr_by_bin()):
            fh.write(f"{lo},{hi},{mean:.6f},{std:.6f},{pooled:.6f}\n")
    paths["prr_by_bin"] = manifest.add_output(p)

    p = os.path.join(out_dir, "per_user_prr.csv")
    with _open_csv(p, "per_user_prr", mid, "vehicle,prr") as fh:
        for vid, prr in metrics.per_user_prr().items():
            fh.write(f"{vid},{prr:.6f}\n")
    paths["per_user_prr"] = manifest.add_output(p)

    p = os.path.join(out_dir, "pir.csv")
    st = metrics.pir_stats()
    with _open_csv(p, "pir", mid, "mean_ms,median_ms,q25_ms,q75_ms,p001_ms,p999_ms,count") as fh:
        fh.write(f"{st.mean:.3f},{st.median:.3f},{st.q25:.3f},{st.q75:.3f},"
                 f"{st.p001:.3f},{st.p999:.3f},{st.count}\n")
    paths["pir"] = manifest.add_output(p)

    p = os.path.join(out_dir, "latency.csv")
    st = metrics.latency_stats()
    with _open_csv(p, "latency", mid, "mean_ms,median_ms,q25_ms,q75_ms,p001_ms,p999_ms,count") as fh:
        fh.write(f"{st.mean:.3f},{st.median:.3f},{st.q25:.3f},{st.q75:.3f},"
                 f"{st.p001:.3f},{st.p999:.3f},{st.count}\n")
    paths["latency"] = manifest.add_output(p)

    p = os.path.join(out_dir, "fairness.csv")
    with _open_csv(p, "fairness", mid, "per_user_prr_std") as fh:
        fh.write(f"{metrics.fairness():.6f}\n")
    paths["fairness"] = manifest.add_output(p)
    return paths


def write_loss_decomposition(out_dir, bins, losses, manifest: RunManifest):
    p = os.path.join(out_dir, "loss_decomposition.csv")
    with _open_csv(p, "loss_decomposition", manifest.id,
                   "bin_low_m,bin_high_m,scheduling_loss_pct") as fh:
        for (lo, hi), loss in zip(bins, losses):
            fh.write(f"{lo},{hi},{loss:.4f}\n")
    manifest.add_output(p)
    return p


def read_csv(path, expect_kind=None):
    """(header fields, rows as string lists, manifest id, kind)."""
    with open(path) as fh:
        head = fh.readline().strip()
        if not head.startswith("# docasim "):
            raise ValueError(f"{path}: missing schema header")
        parts = head.split()
        kind, version = parts[2], parts[3]
        if version != f"v{SCHEMA_VERSION}":
            raise ValueError(f"{path}: schema version mismatch ({version})")
        if expect_kind is not None and kind != expect_kind:
            raise ValueError(f"{path}: expected {expect_kind}, found {kind}")
        mid = parts[4].split("=", 1)[1] if len(parts) > 4 else ""
        cols = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return cols, rows, mid, kind
