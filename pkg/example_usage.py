#!/usr/bin/env python3
"""
Example showing the PAHS Python API end to end: synthetic data, a short
training run, inference and scoring
"""

import logging
import sys
import tempfile
from pathlib import Path

from pahs.model.config import preset
from pahs.model.parameters import load_checkpoint, save_checkpoint
from pahs.sequence.engine import debug_dump, restore
from pahs.traineval.ablation import ablate
from pahs.traineval.metrics import evaluate_pairs, format_metric
from pahs.traineval.synth import SynthSpec, generate_synthetic
from pahs.traineval.trainer import TrainConfig, train


def example_usage():
    """Train the tiny preset for a few steps and compare it with the blurry input"""
    config = preset("tiny", bidirectional=False)
    blur, sharp = generate_synthetic(SynthSpec(height=32, width=32, length=4, seed=1))

    print("\n1. Baseline: blurry input against ground truth...")
    baseline = evaluate_pairs(blur.frames, sharp.frames)
    print(f"psnr={format_metric(baseline['psnr'])} ssim={baseline['ssim']:.4f}")

    print("\n2. Training for 10 iterations...")
    tc = TrainConfig(iterations=10, patch=32, lr=1e-3)
    result = train(config, [(blur, sharp)], train_config=tc)
    print(f"loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}")

    with tempfile.TemporaryDirectory() as tmp:
        print("\n3. Checkpoint round trip...")
        ckpt = save_checkpoint(Path(tmp) / "tiny.ckpt", result.params, config)
        params, loaded_config = load_checkpoint(ckpt)
        print(f"Loaded {len(params)} tensors, c={loaded_config.c}")

        print("\n4. Restoring the sequence...")
        restored = restore(blur, params, loaded_config)
        scores = evaluate_pairs(restored, sharp.frames)
        print(f"psnr={format_metric(scores['psnr'])} ssim={scores['ssim']:.4f}")

        print("\n5. Dumping attention for frame 2...")
        dump = debug_dump(blur, params, loaded_config, 2, Path(tmp) / "dump")
        bundle = dump["bundle"]
        print(f"S_Sel per token: {bundle.S_Sel.ravel().round(3)}")

    print("\n6. Recurrence ablation on the trained weights...")
    report = ablate(config, ["recurrence"], [(blur, sharp)], params=result.params)
    print(report.to_string(index=False))


if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)

    print("Starting PAHS Example")
    print("=" * 60)

    try:
        example_usage()
    except Exception as e:
        print(f"\n❌ Example failed: {str(e)}")
        sys.exit(1)
    print("\n✅ Example completed successfully!")
