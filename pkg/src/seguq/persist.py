"""On-disk formats: checkpoints, posterior files, CSV records, PGM heatmaps.

Checkpoints and posteriors are .npz containers holding a JSON manifest
(format version, architecture hash, seed) next to the float64 arrays, so a
file can always be rebuilt into a network without the original config.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .laplace import LaplacePosterior
from .network import Network, build_unet

FORMAT_VERSION = 1


def arch_hash(arch: dict) -> str:
    return hashlib.sha256(
        json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_model(path, net: Network, arch: dict, seed):
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "version": __version__,
        "arch": arch,
        "arch_hash": arch_hash(arch),
        "seed": seed,
    }
    np.savez(path, manifest=json.dumps(manifest, sort_keys=True),
             theta=net.theta)


def load_model(path):
    with np.load(path) as data:
        manifest = json.loads(str(data["manifest"]))
        theta = data["theta"]
    arch = manifest["arch"]
    net = build_unet(arch["channels"], arch["rank"],
                     tuple(arch["image_hw"]), arch["in_channels"],
                     variance_head=arch["variance_head"])
    if theta.shape != net.theta.shape:
        raise ValueError(f"checkpoint {path} does not match its architecture")
    net.theta[:] = theta
    return net, manifest


def save_posterior(path, post: LaplacePosterior, arch: dict, seed):
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "posterior",
        "version": __version__,
        "arch_hash": arch_hash(arch),
        "prior_precision": post.prior_precision,
        "seed": seed,
    }
    np.savez(path, manifest=json.dumps(manifest, sort_keys=True),
             map_weights=post.map_weights, precision=post.precision)


def load_posterior(path):
    with np.load(path) as data:
        manifest = json.loads(str(data["manifest"]))
        post = LaplacePosterior(data["map_weights"], data["precision"],
                                manifest["prior_precision"])
    return post, manifest


@dataclass
class EvalRecord:
    image_id: str
    split: str
    model: str
    measure: str
    aggregation: str
    score: float | None     # None marks a measure undefined for the model

    def row(self):
        score = "undefined" if self.score is None else repr(float(self.score))
        return [self.image_id, self.split, self.model, self.measure,
                self.aggregation, score]


CSV_COLUMNS = ["image_id", "split", "model", "measure", "aggregation", "score"]


def write_results_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_results_csv(path):
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            score = None if row["score"] == "undefined" else float(row["score"])
            records.append(EvalRecord(row["image_id"], row["split"],
                                      row["model"], row["measure"],
                                      row["aggregation"], score))
    return records


def write_pgm(path, pixel_map):
    """8-bit binary PGM with linear scaling; the min/max used are recorded
    in a JSON sidecar next to the image."""
    m = np.asarray(pixel_map, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        scaled = np.round((m - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(m)
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(scaled.astype(np.uint8).tobytes())
    write_json(str(path) + ".json", {"min": lo, "max": hi})
