"""Few- and zero-shot node classification on text-attributed graphs.

Dual-encoder contrastive pre-training (graph encoder + text encoder, plus a
negative text encoder with a learnable prompt), augmented with edge
perturbation views, a FIFO text-embedding bank with top-K retrieval, and
margin/semantics-opposite objectives; prompting covers zero-shot class
descriptions, few-shot continuous-prompt tuning, and probability-average
inference.
"""

from .augment import PerturbConfig, TextBank, perturb
from .autodiff import ParamSet, Tensor, backward, grad_check
from .data import SynthConfig, TextAttributedGraph, load_tag, save_tag, synth_tag, validate
from .encoders import (EmbeddingBatch, ModelDims, encode_negative_texts,
                       encode_nodes, encode_texts)
from .harness import (Episode, MetricsReport, TaskConfig, evaluate,
                      run_trials, sample_episode)
from .losses import (LossComponents, LossWeights, contrastive_loss,
                     margin_loss, node_perturbation_loss,
                     semantics_opposite_loss, text_matching_loss, total_loss)
from .pretrain import (PretrainConfig, TrainedModel, init_params, load_model,
                       optimizer_step, pretrain, save_model)
from .prompting import (ClassPromptSet, Prediction, class_embeddings,
                        few_shot_tune, make_class_prompts, predict,
                        predict_nodes, probability_average, zero_shot_probs)
from .textproc import TokenBatch, Vocab, batch_texts, build_vocab, tokenize

__version__ = "0.1.0"
