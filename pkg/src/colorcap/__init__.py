"""Deterministic simulator for colored-capability heap temporal safety and
the allocator schemes it is compared against."""

from .capability import (
    CAPABILITY_WIDTH,
    COLOR_BITS_DEFAULT,
    DEFAULT_OTYPETH,
    PERMS_APP,
    PERMS_DATA,
    PERMS_NONE,
    PERMS_ROOT,
    UNSEALED,
    Capability,
    CapabilityError,
    ColorOutOfRange,
    MachineConfig,
    MonotonicityViolation,
    OtypeInterpretation,
    OtypeKind,
    PermissionDenied,
    PermissionSet,
    SealedOperand,
    UntaggedOperand,
    clear_tag,
    derive,
    interpret,
    pack,
    set_color,
    unpack,
)
from .harness import (
    ConfigError,
    LifetimeOracle,
    Metrics,
    RunConfig,
    RunResult,
    corpus_gate,
    run_corpus,
    run_trace,
)
from .heap import FreeListHeap, OutOfMemory
from .machine import Fault, FaultKind, NUM_REGISTERS, PvtBuffer, TaggedMachine
from .mrs import MallocRevocationShim, PoolExhausted, RevocationJob
from .schemes import SCHEME_NAMES, make_scheme
from .trace import ParseError, Trace, parse_trace, format_trace
from .unr import BitmapNode, Exhausted, NotClaimed, Run, UnrState
from .workloads import CorpusCase, SplitMix64, gen_churn, gen_corpus, gen_locality

__version__ = "0.1.0"
