"""Malloc revocation shim: color lifecycle, double-free detection, and
snapshot-based revocation sweeps over the tagged machine.

Allocation claims the lowest free color, stamps it onto the capability with
the shim's sw_vmem authority, and strips that authority from what the
application receives.  Free retracts the color's provenance-validity bit -
detecting double frees as a side effect - and returns the block to the free
list immediately; no quarantine is needed because retraction already makes
every stale capability fault.

Colors stay out of rotation until a revocation sweep completes.  When the
unclaimed population drops below the threshold, the shim snapshots the PVT,
freezes the retracted set as the sweep's targets, scans memory and
registers clearing matching tags, then clears the target bits and batch
releases the colors.  Colors retracted after the snapshot stay retracted
and wait for the next sweep.  The sweep runs to completion at trigger time
by default; a window size makes it advance incrementally across subsequent
allocation calls instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .capability import (
    PERMS_APP,
    PERMS_ROOT,
    UNSEALED,
    Capability,
    derive,
    set_color,
)
from .heap import FreeListHeap, OutOfMemory, round_up
from .machine import (
    FAULT_DOUBLE_FREE,
    FAULT_MALFORMED_FREE,
    Fault,
    TaggedMachine,
)
from .unr import Exhausted, UnrState

__all__ = [
    "MallocRevocationShim",
    "PoolExhausted",
    "RevocationJob",
    "OutOfMemory",
]


class PoolExhausted(Exception):
    """Every color is claimed and no sweep can reclaim any."""


@dataclass
class RevocationJob:
    """One in-flight sweep: a PVT snapshot, the frozen target colors, and a
    cursor over the tagged addresses captured at snapshot time."""

    snapshot: bytes
    targets: frozenset[int]
    addresses: list[int]
    cursor: int = 0
    swept: int = 0

    @property
    def state(self) -> str:
        return "done" if self.cursor >= len(self.addresses) else "scanning"


class MallocRevocationShim:
    def __init__(
        self,
        machine: TaggedMachine,
        threshold_fraction: float = 0.01,
        sweep_window: Optional[int] = None,
    ) -> None:
        config = machine.config
        self.machine = machine
        self.heap = FreeListHeap(config.heap_base, config.heap_size)
        self.pool = config.color_count - 1  # color 0 is reserved
        self.unr = UnrState(self.pool)
        self.threshold_fraction = threshold_fraction
        self.threshold_count = math.ceil(threshold_fraction * self.pool)
        self.sweep_window = sweep_window
        self.root = Capability(
            address=config.heap_base,
            base=config.heap_base,
            length=config.heap_size,
            perms=PERMS_ROOT,
            otype=UNSEALED,
            tag=True,
        )
        self.live: dict[int, tuple[int, int]] = {}  # base -> (size, color)
        self.live_bytes = 0
        self.retracted_pending: set[int] = set()
        self.job: Optional[RevocationJob] = None
        self.allocations = 0
        self.frees = 0
        self.revocations = 0
        self.swept_tags = 0
        self.peak_resident_bytes = 0
        self.peak_live_bytes = 0
        self.peak_unr_bytes = 0
        self._otypeth = config.otypeth
        self._sample()

    # -- accounting -----------------------------------------------------

    @property
    def unclaimed(self) -> int:
        return self.pool - self.unr.population

    @property
    def resident_bytes(self) -> int:
        """Live heap bytes plus the PVT (doubled while a snapshot is held)
        plus the ID-allocator node memory."""
        pvt = self.machine.config.pvt_bytes
        if self.job is not None:
            pvt *= 2
        return self.live_bytes + pvt + self.unr.node_memory()

    def _sample(self) -> None:
        unr_bytes = self.unr.node_memory()
        pvt = self.machine.config.pvt_bytes
        if self.job is not None:
            pvt *= 2
        resident = self.live_bytes + pvt + unr_bytes
        if resident > self.peak_resident_bytes:
            self.peak_resident_bytes = resident
        if self.live_bytes > self.peak_live_bytes:
            self.peak_live_bytes = self.live_bytes
        if unr_bytes > self.peak_unr_bytes:
            self.peak_unr_bytes = unr_bytes

    # -- allocation ------------------------------------------------------

    def m_malloc(self, size: int) -> Capability:
        """Allocate >= size bytes and return a freshly colored capability.

        Polls any in-flight sweep first, then runs the threshold check.
        Raises OutOfMemory (heap) or PoolExhausted (no color reclaimable).
        """
        if size <= 0:
            raise ValueError("allocation size must be positive")
        self._poll_job()
        if self.maybe_revoke() and self.sweep_window is None:
            self.revocation_step()
            self.revocation_finalize()
        block_size = round_up(size)
        base = self.heap.alloc(block_size)
        try:
            color = self._claim_color()
        except PoolExhausted:
            self.heap.free(base, block_size)
            raise
        narrowed = derive(self.root, base, block_size, PERMS_APP, self._otypeth)
        cap = set_color(narrowed, self.root, color, self._otypeth)
        # Fresh colors already read valid; recycled ones were cleared when
        # their sweep finalized, so this is a coherence no-op either way.
        self.machine.pvt_set(color, retracted=False)
        self.live[base] = (block_size, color)
        self.live_bytes += block_size
        self.allocations += 1
        self._sample()
        return cap

    def m_calloc(self, size: int) -> Capability:
        """m_malloc plus zero fill."""
        cap = self.m_malloc(size)
        self.machine.write_bytes(cap.base, b"\x00" * cap.length)
        return cap

    def _claim_color(self) -> int:
        try:
            return self.unr.alloc_first_free()
        except Exhausted:
            pass
        self._force_reclaim()
        try:
            return self.unr.alloc_first_free()
        except Exhausted:
            raise PoolExhausted(
                "provenance identifiers exhausted and none reclaimable"
            ) from None

    def _force_reclaim(self) -> None:
        """Run a sweep to completion right now; allocation cannot proceed
        until IDs come back."""
        if self.job is None:
            if not self.retracted_pending:
                raise PoolExhausted("provenance identifiers exhausted")
            self._start_job()
        self.revocation_step()
        self.revocation_finalize()

    # -- free --------------------------------------------------------------

    def m_free(self, cap: Optional[Capability]):
        """Validate and free; returns None or a MalformedFree/DoubleFree fault.

        Total over hostile input: untagged, uncolored, interior, and
        non-heap capabilities are malformed; a retracted color means the
        allocation was already freed.
        """
        if cap is None or not cap.tag:
            return FAULT_MALFORMED_FREE
        otype = cap.otype
        if otype is None or not 0 < otype < self._otypeth:
            return FAULT_MALFORMED_FREE
        if self.machine.pvb_retracted(otype):
            return FAULT_DOUBLE_FREE
        record = self.live.get(cap.base)
        if record is None or record[1] != otype:
            return FAULT_MALFORMED_FREE
        size = record[0]
        self.machine.pvt_set(otype, retracted=True)
        self.retracted_pending.add(otype)
        del self.live[cap.base]
        self.live_bytes -= size
        self.heap.free(cap.base, size)  # immediately reusable
        self.frees += 1
        self._sample()
        return None

    # -- revocation ----------------------------------------------------------

    def maybe_revoke(self) -> bool:
        """Start a revocation job if the unclaimed population fell below the
        threshold and none is in flight."""
        if self.job is not None:
            return False
        if self.unclaimed >= self.threshold_count:
            return False
        self._start_job()
        return True

    def _start_job(self) -> None:
        # Freeze the targets: colors retracted from here on wait for the
        # next sweep and stay retracted when this one completes.
        targets = frozenset(self.retracted_pending)
        self.retracted_pending.clear()
        self.job = RevocationJob(
            snapshot=bytes(self.machine.pvt),
            targets=targets,
            addresses=sorted(self.machine.caps),
        )
        self.machine.start_cap_write_log()
        self.revocations += 1
        self._sample()

    def _poll_job(self) -> None:
        job = self.job
        if job is None:
            return
        if self.sweep_window is not None and job.state != "done":
            self.revocation_step(self.sweep_window)
        if job.state == "done":
            self.revocation_finalize()

    def revocation_step(self, window: Optional[int] = None) -> int:
        """Advance the sweep over up to `window` tagged words (all of them
        when None); returns the number of words scanned."""
        job = self.job
        if job is None:
            raise RuntimeError("no revocation in progress")
        end = len(job.addresses)
        if window is not None:
            end = min(job.cursor + window, end)
        chunk = job.addresses[job.cursor : end]
        job.swept += self.machine.sweep_scan(
            job.targets, addresses=chunk, include_registers=False
        )
        scanned = end - job.cursor
        job.cursor = end
        return scanned

    def revocation_finalize(self) -> int:
        """Complete a fully scanned job: re-visit words that received
        capability stores during the sweep, scan the registers, clear the
        target bits, and batch release the colors.  Returns the number of
        colors reclaimed."""
        job = self.job
        if job is None:
            raise RuntimeError("no revocation in progress")
        if job.state != "done":
            raise RuntimeError("revocation scan has not completed")
        rewrites = self.machine.take_cap_write_log()
        job.swept += self.machine.sweep_scan(
            job.targets, addresses=sorted(rewrites), include_registers=True
        )
        self.machine.pvt_set_many(job.targets, retracted=False)
        if job.targets:
            self.unr.batch_release(sorted(job.targets))
        self.retracted_pending.difference_update(job.targets)
        self.swept_tags += job.swept
        self.job = None
        self._sample()
        return len(job.targets)
