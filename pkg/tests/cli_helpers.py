"""A tiny end-to-end CLI workspace shared by the CLI and acceptance tests."""

import hashlib
from pathlib import Path

import numpy as np

from pfnlab.bench.cli import main

SEQUENCE = ("pretrain", "finetune", "sweep", "scratch", "eval", "report", "analyze", "subsample")

CONFIG = """\
experiment = "smoke"
seed = 0
out = "out"

[model]
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32

[prior]
batch_size = 2
n_samples = [32, 64]

[pretrain]
steps = 5

[protocol]
lr = 1e-3
pred_len = 32
max_steps = 20
patience = 2

[sweep]
n = 2

[scratch]
max_steps = 20

[subsample]
dataset = "cls"
levels = 2
seeds = [0]

[mlp]
max_steps = 30

[[datasets]]
name = "cls"
synthetic = true
n_samples = 300
n_features = 4
task = "classification"
n_classes = 3

[[datasets]]
name = "table"
path = "table.csv"
task = "regression"
target = "price"
categorical = ["zone"]
binary = ["garden"]
"""


def write_workspace(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(11)
    lines = ["area,rooms,garden,zone,price"]
    for i in range(200):
        area = rng.uniform(30, 150)
        rooms = int(rng.integers(1, 6))
        garden = "yes" if rng.random() < 0.4 else "no"
        zone = ["north", "south", "east"][i % 3]
        price = 2.0 * area + 15 * rooms + (20 if garden == "yes" else 0) + rng.normal() * 5
        lines.append(f"{area:.3f},{rooms},{garden},{zone},{price:.3f}")
    (root / "table.csv").write_text("\n".join(lines) + "\n")
    cfg = root / "c.toml"
    cfg.write_text(CONFIG)
    return cfg


def run_sequence(cfg: Path, out: Path) -> list[int]:
    return [main([cmd, "--config", str(cfg), "--out", str(out)]) for cmd in SEQUENCE]


def digest_outputs(out: Path) -> dict[str, str]:
    """Hashes of every CSV and JSONL file below ``out``."""
    files = sorted(p for p in out.rglob("*") if p.suffix in (".csv", ".jsonl"))
    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}
