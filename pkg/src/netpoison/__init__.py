"""Poisoning toolkit for graph-learning hardware-security pipelines.

Core pieces: a combinational netlist IR with parser/emitter, a vectorized
logic simulator with coverage and equivalence checking, a logic optimizer,
dataflow-graph extraction, functionality-preserving trigger injection, a
from-scratch GCN with top-k pooling, dataset poisoning and attack metrics,
two defenses, a benchmark generator, and a CLI over all of it.
"""

from .netlist import (
    Assign,
    Binary,
    Concat,
    Const,
    Diagnostic,
    Expr,
    LValue,
    Netlist,
    NetlistError,
    Port,
    Ref,
    Slice,
    Ternary,
    Unary,
    emit_netlist,
    validate,
)
from .parser import parse_netlist, parse_netlist_file

__version__ = "0.1.0"
