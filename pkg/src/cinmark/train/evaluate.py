"""Per-noise evaluation tables and strength sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .. import fsm, noise
from ..core import no_grad
from ..metrics import MetricReport, MetricRow, accuracy, ber, mean_over, psnr, ssim
from ..model import CIN

SUPERIMPOSED = "Superimposed"


def worker_count(default: int = 4) -> int:
    """Thread cap from ``CIN_THREADS``; falls back to min(default, cpu count)."""
    env = os.environ.get("CIN_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"CIN_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return max(1, min(default, os.cpu_count() or 1))


def _map(fn, items: Sequence, workers: int) -> list:
    # executor.map preserves input order, so results merge deterministically
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _bitstring(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).ravel())


@dataclass
class _Embedded:
    cover8: np.ndarray
    wi8: np.ndarray
    msg: np.ndarray


def _ssim_batch(a8: np.ndarray, b8: np.ndarray) -> List[float]:
    win = min(11, a8.shape[-1], a8.shape[-2])
    win -= 1 - win % 2
    return [ssim(x, y, data_range=255.0, win_size=win) for x, y in zip(a8, b8)]


def evaluate(model: CIN, images: np.ndarray, pool="n_pool", strength: float = 1.0, seed: int = 0,
             batch_size: int = 8, tau: float = 0.5, workers: Optional[int] = None) -> MetricReport:
    """Embed random messages into every image, attack with each pool noise in turn, extract.

    Watermarked and attacked images are quantised to 8 bits, as if written
    to PNG. Messages depend only on ``seed`` and the batch index, so every
    noise row sees the same watermarked images.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError(f"need a non-empty (N, 3, H, W) image array, got shape {images.shape}")
    pool = noise.get_pool(pool)
    workers = worker_count() if workers is None else workers
    L = model.config.message_length
    starts = list(range(0, len(images), batch_size))

    def embed_batch(b):
        cover = images[starts[b]:starts[b] + batch_size]
        msg = np.random.default_rng([seed, 0, b]).integers(0, 2, (len(cover), L)).astype(np.float32)
        with no_grad():
            wi, _ = model.embed(cover, msg, strength)
        return _Embedded(fsm.export(cover), fsm.export(wi), msg)

    embedded = _map(embed_batch, range(len(starts)), workers)

    rows = [(s.label, s.kind, (s,)) for s in pool.specs]
    if pool.superimpose_row:
        rows.append((SUPERIMPOSED, SUPERIMPOSED, tuple(s for s in pool.specs if s.kind != "Identity")))

    report = MetricReport()
    for r_idx, (label, kind, specs) in enumerate(rows):
        def attack_batch(b, r_idx=r_idx, specs=specs):
            e = embedded[b]
            wi = fsm.from_uint8(e.wi8)
            rng = np.random.default_rng([seed, 1 + r_idx, b])
            with no_grad():
                attacked = noise.superimpose(specs, wi, fsm.from_uint8(e.cover8), rng)
            att8 = fsm.export(attacked)
            return att8, model.extract(fsm.from_uint8(att8), tau)

        outputs = _map(attack_batch, range(len(starts)), workers)
        recs = []
        for b, (att8, ex) in enumerate(outputs):
            e = embedded[b]
            ss = _ssim_batch(e.cover8, e.wi8)
            for i in range(len(e.msg)):
                recs.append({
                    "noise": label, "index": starts[b] + i,
                    "embedded": _bitstring(e.msg[i]), "extracted": _bitstring(ex.bits[i]),
                    "extracted_im": _bitstring(ex.bits_im[i]),
                    "extracted_niam": None if ex.bits_niam is None else _bitstring(ex.bits_niam[i]),
                    "route": ex.routes[i], "p_jpeg": float(ex.p_jpeg[i]),
                    "psnr_cover": psnr(e.cover8[i], e.wi8[i]),
                    "psnr_noised": psnr(e.wi8[i], att8[i]), "ssim": ss[i],
                })
        report.per_image.extend(recs)
        report.rows.append(_row(label, kind, specs, recs))
    return report


def _bits(s: str) -> np.ndarray:
    return np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")


def _row(label, kind, specs, recs) -> MetricRow:
    emb = np.stack([_bits(r["embedded"]) for r in recs])
    acc = accuracy(np.stack([_bits(r["extracted"]) for r in recs]), emb)
    acc_im = accuracy(np.stack([_bits(r["extracted_im"]) for r in recs]), emb)
    acc_niam = None
    if recs[0]["extracted_niam"] is not None:
        acc_niam = accuracy(np.stack([_bits(r["extracted_niam"]) for r in recs]), emb)
    factor = "" if len(specs) != 1 or specs[0].factor is None else f"{specs[0].factor:g}"
    return MetricRow(
        noise=label, factor=factor,
        psnr_cover=mean_over([r["psnr_cover"] for r in recs]),
        psnr_noised=None if kind == "Identity" else mean_over([r["psnr_noised"] for r in recs]),
        ssim=mean_over([r["ssim"] for r in recs]), acc=acc, acc_im=acc_im, acc_niam=acc_niam,
        route_niam=100.0 * float(np.mean([r["route"] == "niam" for r in recs])),
    )


@dataclass
class SweepRow:
    strength: float
    psnr: float
    ssim: float
    ber: float
    residual_norm: float  # mean L2 norm of (watermarked - cover) before quantisation


def strength_sweep(model: CIN, images: np.ndarray, strengths: Sequence[float] = (0.5, 1.0, 2.0),
                   seed: int = 0, batch_size: int = 8) -> List[SweepRow]:
    """Noise-free embed/extract at each strength with the same messages and weights."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError(f"need a non-empty (N, 3, H, W) image array, got shape {images.shape}")
    L = model.config.message_length
    out = []
    for s in strengths:
        ps, ss, got, sent, norms = [], [], [], [], []
        for b, lo in enumerate(range(0, len(images), batch_size)):
            cover = images[lo:lo + batch_size]
            msg = np.random.default_rng([seed, 0, b]).integers(0, 2, (len(cover), L)).astype(np.float32)
            with no_grad():
                wi, _ = model.embed(cover, msg, s)
            norms += list(np.sqrt(((wi.data.astype(np.float64) - cover) ** 2).sum(axis=(1, 2, 3))))
            c8, w8 = fsm.export(cover), fsm.export(wi)
            ps += [psnr(a, b_) for a, b_ in zip(c8, w8)]
            ss += _ssim_batch(c8, w8)
            got.append(model.extract(fsm.from_uint8(w8)).bits)
            sent.append(msg)
        out.append(SweepRow(float(s), mean_over(ps), mean_over(ss), ber(np.concatenate(got), np.concatenate(sent)),
                            mean_over(norms)))
    return out


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["strength,psnr_db,ssim,ber_pct,residual_norm"]
    lines += [f"{r.strength:g},{r.psnr:.4f},{r.ssim:.5f},{r.ber:.3f},{r.residual_norm:.6g}" for r in rows]
    return "\n".join(lines) + "\n"
