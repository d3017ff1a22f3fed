"""Train the smallest variant on coloured noise images for one epoch,
checkpoint it, reload it and evaluate.

    python demos/train_synthetic.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from mscvit.data import synth_dataset
from mscvit.model import build_model, variant_config
from mscvit.train import TrainConfig, evaluate_top1, load_checkpoint, train_epochs

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
train = synth_dataset(4, 256, seed=0)
test = synth_dataset(4, 64, seed=1)

model = build_model(variant_config("t", 32, num_classes=4), seed=0)
cfg = TrainConfig(epochs=1, batch_size=32, warmup_epochs=0)
history = train_epochs(model, train, test, cfg, out_dir=out,
                       log=lambda r: print(f"epoch {r['epoch']}: loss {r['train_loss']:.3f}, "
                                           f"train {r['train_acc']:.1%}, test {r['test_top1']:.1%}"))

fresh = build_model(model.config, seed=123)
load_checkpoint(fresh, out / "checkpoint.ckpt")
print(f"reloaded checkpoint from {out}: test top-1 {evaluate_top1(fresh, test):.1%}")
