"""
Train, sample and score
=======================

A short run on a small dataset, end to end: generate pairs, train the
denoiser, sample the validation split and compare against pasting the
agnostic image back (the copy-agnostic baseline).  Three hundred steps is
far too few to beat the baseline; the full 3000-step recipe is

    itamdt gen-data --n 512 --out data
    itamdt train --data data --out runs/seed0 --steps 3000
    itamdt eval --ckpt runs/seed0/step_003000 --data data
"""

import json
import sys
from pathlib import Path

from itamdt.evaluation import evaluate
from itamdt.sampler import CfgConfig
from itamdt.synth import gen_dataset
from itamdt.training import TrainConfig, train

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "train_demo"
gen_dataset(0, 128, root / "data")

config = TrainConfig(data_dir=str(root / "data"), out_dir=str(root / "run"), steps=300, ckpt_every=300)
ckpt = train(config)

rows = [json.loads(line) for line in (root / "run" / "metrics.jsonl").read_text().splitlines()]
for r in rows[::50] + rows[-1:]:
    print(f"step {r['step']:4d}  denoise {r['l_denoise']:.3f}  mask {r['l_mask']:.3f}  "
          f"inpaint {r['l_inpaint']:.3f}  total {r['l_total']:.3f}")

# the masked-cell noise term cannot drop below about 1: those cells are hidden
# from the network, so their noise is unpredictable

result = evaluate(ckpt, root / "data", cfg=CfgConfig(steps=30), out=root / "eval.json")
print(json.dumps(result["aggregate"], indent=1))
