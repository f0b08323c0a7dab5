"""
Singular-value spectra of frozen and adapted attention projections.

For every block and slot the report holds the base spectrum, the spectrum of
the merged weight of whichever adapter the block carries, and the spectrum of
the difference merged - base. Sigmas are written raw.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from config import CONFIG
from nn.adapter import AdapterMode, Slot, merge_parallel, merge_serial
from nn.attention import EncoderStack
from nn.errors import ConvergenceError
from nn.linalg import svd
from utils.reporting import write_csv

SPECTRUM_COLUMNS = ("block", "slot", "variant", "index", "sigma")


class Variant:
    BASE = "base"
    LORA = "lora"
    SERIAL = "serial"
    DELTA = "delta"


@dataclass(frozen=True)
class Spectrum:
    block: int
    slot: str
    variant: str
    sigma: np.ndarray

    def rows(self) -> list[tuple]:
        return [(self.block, self.slot, self.variant, i, float(s)) for i, s in enumerate(self.sigma)]


def _matrices(stack: EncoderStack, slots: Iterable[str]) -> list[tuple[int, str, str, np.ndarray]]:
    jobs = []
    for i, block in enumerate(stack.blocks):
        w, ad = block.weights, block.adapters
        for slot in slots:
            base = w.projection(slot)
            jobs.append((i, slot, Variant.BASE, base))
            if ad is None:
                continue
            if ad.mode == AdapterMode.PARALLEL:
                merged, variant = merge_parallel(base, ad.parallel[slot]), Variant.LORA
            else:
                merged, variant = merge_serial(base, ad.serial), Variant.SERIAL
            jobs.append((i, slot, variant, merged))
            jobs.append((i, slot, Variant.DELTA, merged - base))
    return jobs


def _spectrum(job: tuple[int, str, str, np.ndarray]) -> Spectrum:
    block, slot, variant, m = job
    try:
        return Spectrum(block, slot, variant, svd(m).s)
    except ConvergenceError as e:
        raise ConvergenceError(f"block {block}, slot {slot}, variant {variant}: {e}") from e


def spectra(stack: EncoderStack, slots: Iterable[str] = (Slot.Q, Slot.K, Slot.V),
            threads: Optional[int] = None) -> list[Spectrum]:
    slots = list(slots)
    bad = [s for s in slots if s not in (Slot.Q, Slot.K, Slot.V)]
    if bad:
        raise ValueError(f"spectra cover q, k and v only, got {bad[0]!r}")
    jobs = _matrices(stack, slots)
    threads = CONFIG.THREADS if threads is None else threads
    if threads <= 1:
        return [_spectrum(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_spectrum, jobs))


def spectrum_report(stack: EncoderStack, slots: Iterable[str], out_path: Path | str,
                    threads: Optional[int] = None) -> list[Spectrum]:
    """Writes the CSV (block, slot, variant, index, sigma) and returns the spectra."""
    result = spectra(stack, slots, threads)
    write_csv(out_path, SPECTRUM_COLUMNS, [row for s in result for row in s.rows()])
    logging.info(f"Spectrum report: {len(result)} spectra -> {out_path}")
    return result
