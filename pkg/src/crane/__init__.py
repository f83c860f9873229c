"""Grammar-constrained decoding that switches between free reasoning and
masked answer windows, with the recognizer, masks, machines and evaluation
tools it is built on."""

from .decoder import (
    DecodeConfig,
    DecodeSession,
    Generation,
    Greedy,
    Temperature,
    constrained_generate,
    crane_generate,
    crane_step,
    extract_constrained,
    unconstrained_generate,
)
from .evaluation import (
    EquivalenceOracle,
    EvalReport,
    TaskInstance,
    check_equivalence,
    check_parse,
    check_prover9_compiles,
    extract_final_answer,
    run_eval,
)
from .grammar import (
    GrammarError,
    GrammarSpec,
    SymbolRef,
    TerminalDef,
    augment_with_delimiters,
    build_reasoning_grammar,
    parse_grammar_text,
    specialize_terminal,
)
from .grammars import gsm_answer_grammar, load_grammar
from .lm import RemoteLM, ScriptedLM, TMBackedLM
from .recognizer import PrefixStatus, RecognizerState, advance, init, is_member
from .token_mask import MaskBits, NoViableToken, Vocabulary, apply_mask, compute_mask
from .turing import (
    Configuration,
    StepBudget,
    TuringMachine,
    bundled_machine,
    demo_prop34,
    encode_config,
    enumerate_encodings,
    tm_run,
    tm_step,
)

__version__ = "0.1.0"
