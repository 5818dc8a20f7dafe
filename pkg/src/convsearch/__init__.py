"""Desk-scale laboratory for context-aware conversational dense retrieval.

Trains a tiny decoder-only transformer with a three-part objective
(contrastive retrieval, rewrite alignment, generation preservation), embeds
queries from the current-query span of the full dialogue, retrieves passages
by exact cosine top-k, and evaluates with MRR / nDCG@3 / Hit@k plus the
Historical Interference Rate.
"""

from .autodiff import GradCheckReport, Tensor, finite_difference_check, no_grad
from .corpus import Conversation, GenConfig, Passage, Turn, generate, load_and_validate, oracle_rewrite
from .evaluator import EvalReport, evaluate_run, hir_at_k, hit_at_k, lexical_match, mrr, ndcg_at_k
from .index import EmbeddingStore, RankedResult, build_store, load_store, save_store, search
from .losses import LossBreakdown, LossWeights, ccl_loss, combined_loss, cosine_sim, gen_loss, igl_loss
from .model import (
    ModelConfig,
    embed_passage,
    extract_query_embedding,
    forward,
    generate_greedy,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .querytypes import QueryTypeConfig, build_query_input, compare_query_types, run_retrieval
from .sampler import Batch, TrainingInstance, build_epoch, sample_instance
from .tokenizer import EncodedDialogue, Vocab, build_vocab, decode, encode_conversation
from .trainer import (
    AblationFlags,
    StepLog,
    TrainConfig,
    adam_step,
    response_perplexity,
    run_ablation_suite,
    train,
)

__version__ = "0.1.0"
