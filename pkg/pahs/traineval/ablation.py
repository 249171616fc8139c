"""
Ablation harness: evaluates config variants on a fixed validation set.

Variants are named ``<family>-<value>``: recurrence count (``n0``..``n4``),
update order, attention type and mode, Ping-Pong inputs, future window and
the PPRNN x SNLA x bidirectional synergy grid. A family name selects all of
its members; ``all`` selects the whole grid.
"""

import logging
import time
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pahs.errors import ConfigError
from pahs.model.config import (
    ATTENTION_MODES,
    ATTENTIONS,
    PP_INPUTS,
    PP_ORDERS,
    ModelConfig,
)
from pahs.model.network import (
    RecurrentCarry,
    extract_features,
    latent_step,
    pprnn_update,
    snla,
)
from pahs.model.parameters import ParameterStore, init_parameters, init_shapes
from pahs.sequence.engine import FrameSequence, restore
from pahs.tensorcore.tape import Tape
from pahs.traineval.metrics import evaluate_pairs

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["variant", "psnr", "ssim", "wall_ms"]
HISTOGRAM_COLUMNS = ["variant", "bin_lo", "bin_hi", "count"]
WINDOWS = (0, 3, 7)
RECURRENCE_SWEEP = (0, 1, 2, 4)
TIMING_COLUMNS = ["n", "wall_ms"]
DEFAULT_REPEATS = 3

Pair = Tuple[FrameSequence, FrameSequence]


def variant_families(base: ModelConfig) -> "OrderedDict[str, OrderedDict[str, dict]]":
    """family -> variant name -> config overrides"""
    families: "OrderedDict[str, OrderedDict[str, dict]]" = OrderedDict()
    families["recurrence"] = OrderedDict((f"n{i}", {"n_pp": i}) for i in range(5))
    families["order"] = OrderedDict((f"order-{o}", {"pp_order": o}) for o in PP_ORDERS)
    families["attention"] = OrderedDict(
        (f"attn-{a}", {"attention": a}) for a in reversed(ATTENTIONS)
    )
    families["mode"] = OrderedDict(
        (f"mode-{m}", {"attention_mode": m}) for m in ATTENTION_MODES
    )
    families["inputs"] = OrderedDict(
        (f"inputs-{i}", {"pp_inputs": i}) for i in reversed(PP_INPUTS)
    )
    families["window"] = OrderedDict(
        (f"window-{w}", {"future_window": w, "bidirectional": True}) for w in WINDOWS
    )
    synergy: "OrderedDict[str, dict]" = OrderedDict()
    n_on = base.n_pp if base.n_pp > 0 else 1
    for pp in (0, 1):
        for sn in (0, 1):
            for bi in (0, 1):
                synergy[f"synergy-pp{pp}-snla{sn}-bi{bi}"] = {
                    "n_pp": n_on if pp else 0,
                    "attention": "snla" if sn else "none",
                    "bidirectional": bool(bi),
                }
    families["synergy"] = synergy
    return families


def resolve_variants(
    names: Sequence[str], base: ModelConfig
) -> "OrderedDict[str, ModelConfig]":
    """Expand family names and ``all``; unknown names raise ConfigError"""
    families = variant_families(base)
    flat: Dict[str, dict] = {}
    for members in families.values():
        flat.update(members)
    selected: "OrderedDict[str, ModelConfig]" = OrderedDict()
    for name in names:
        if name == "all":
            chosen = flat
        elif name in families:
            chosen = families[name]
        elif name in flat:
            chosen = {name: flat[name]}
        else:
            raise ConfigError(f"unknown ablation variant {name!r}")
        for key, overrides in chosen.items():
            selected[key] = base.with_overrides(**overrides)
    return selected


def params_for(
    variant: ModelConfig, shared: ParameterStore, name: str = "variant"
) -> ParameterStore:
    """Subset of ``shared`` matching ``variant``; tensors whose shape differs are
    taken from a fresh seeded init of the variant"""
    shapes = init_shapes(variant)
    mismatched = [
        n for n, s in shapes.items() if n not in shared or shared[n].shape != s
    ]
    if not mismatched:
        return ParameterStore({n: shared[n] for n in shapes})
    logger.info(f"{name}: initializing {len(mismatched)} tensors {mismatched}")
    fresh, reinit = init_parameters(variant), set(mismatched)
    return ParameterStore(
        {n: fresh[n] if n in reinit else shared[n] for n in shapes}
    )


def shared_parameters(base: ModelConfig) -> ParameterStore:
    """Bidirectional superset so every same-shaped variant reads identical weights"""
    return init_parameters(base.with_overrides(bidirectional=True))


def evaluate_variant(
    config: ModelConfig,
    params: ParameterStore,
    data: Sequence[Pair],
    repeats: int = DEFAULT_REPEATS,
) -> Dict[str, float]:
    """PSNR/SSIM over ``data`` and the best-of-``repeats`` wall time in ms"""
    best = float("inf")
    preds: List[np.ndarray] = []
    targets: List[np.ndarray] = []
    for _ in range(max(1, repeats)):
        preds, targets = [], []
        start = time.perf_counter()
        for blur, sharp in data:
            preds.extend(restore(blur, params, config))
            targets.extend(sharp.frames)
        best = min(best, (time.perf_counter() - start) * 1000.0)
    scores = evaluate_pairs(preds, targets)
    return {"psnr": scores["psnr"], "ssim": scores["ssim"], "wall_ms": best}


def recurrence_timing(
    config: ModelConfig,
    blur: FrameSequence,
    params: Optional[ParameterStore] = None,
    ns: Sequence[int] = RECURRENCE_SWEEP,
    repeats: int = 5,
) -> pd.DataFrame:
    """Best-of-``repeats`` time of the recurrent core per recurrence count.

    The core is the Ping-Pong update plus attention, run from a zero carry on
    the first frame's features; the extractor and reconstructor stay out of
    the measurement.
    Columns: n, wall_ms.
    """
    shared = params if params is not None else shared_parameters(config)
    tape = Tape(record=False)
    B_t = tape.constant(blur.frames[0].astype(config.dtype))
    batch, _, height, width = blur.dims
    config.check_frame(height, width)
    rows = []
    for n in ns:
        variant = config.with_overrides(n_pp=n)
        p = params_for(variant, shared, f"n{n}").bind(tape).scope("fwd")
        f_B = extract_features(B_t, p, variant)
        carry = RecurrentCarry.zeros(tape, variant, batch, height, width)
        best = float("inf")
        for _ in range(max(1, repeats)):
            start = time.perf_counter()
            snla(f_B, pprnn_update(carry, f_B, n, p, variant), p, variant)
            best = min(best, (time.perf_counter() - start) * 1000.0)
        rows.append({"n": n, "wall_ms": best})
        logger.debug(f"recurrence n={n}: {best:.3f}ms")
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def ablate(
    config: ModelConfig,
    variants: Sequence[str],
    data: Sequence[Pair],
    params: Optional[ParameterStore] = None,
    repeats: int = DEFAULT_REPEATS,
    progress: bool = False,
) -> pd.DataFrame:
    """One report row per variant with columns variant,psnr,ssim,wall_ms.

    Variants whose tensor shapes match ``params`` (or the shared seeded
    initialization of ``config``) reuse those weights.
    """
    selected = resolve_variants(variants, config)
    if not data:
        raise ConfigError("ablation needs a validation set")
    shared = params if params is not None else shared_parameters(config)
    rows = []
    for name, variant in tqdm(selected.items(), desc="ablate", disable=not progress):
        store = params_for(variant, shared, name)
        scores = evaluate_variant(variant, store, data, repeats)
        rows.append({"variant": name, **scores})
        logger.info(
            f"{name}: psnr={scores['psnr']:.3f} ssim={scores['ssim']:.4f} "
            f"wall={scores['wall_ms']:.1f}ms"
        )
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def selection_scores(
    config: ModelConfig, params: ParameterStore, seq: FrameSequence
) -> np.ndarray:
    """All S_Sel values the forward cell produces over ``seq``"""
    tape = Tape(record=False)
    p = params.bind(tape).scope("fwd")
    n, _, height, width = seq.dims
    carry = RecurrentCarry.zeros(tape, config, n, height, width)
    values = []
    for frame in seq.frames:
        B_t = tape.constant(frame.astype(config.dtype))
        result = latent_step(B_t, carry, p, config)
        carry = result.carry
        if result.bundle is not None:
            values.append(result.bundle.S_Sel.ravel())
    return np.concatenate(values) if values else np.zeros(0)


def selection_histogram(
    config: ModelConfig,
    variants: Sequence[str],
    data: Sequence[Pair],
    params: Optional[ParameterStore] = None,
    bins: int = 10,
) -> pd.DataFrame:
    """Histogram of S_Sel over [0, 1] for every SNLA variant"""
    selected = resolve_variants(variants, config)
    shared = params if params is not None else shared_parameters(config)
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for name, variant in selected.items():
        if variant.attention != "snla":
            continue
        store = params_for(variant, shared, name)
        scores = np.concatenate(
            [selection_scores(variant, store, blur) for blur, _ in data]
        )
        counts, _ = np.histogram(scores, bins=edges)
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            rows.append(
                {"variant": name, "bin_lo": lo, "bin_hi": hi, "count": int(count)}
            )
    return pd.DataFrame(rows, columns=HISTOGRAM_COLUMNS)
