"""FGSM and differential-evolution pixel attacks."""

from .campaign import attack_dataset, model_oracle, sample_seed
from .de import DeState, de_step, differential_evolution, draw_indices, init_state
from .fgsm import FgsmParams, fgsm, input_gradient
from .one_pixel import (OnePixelParams, PixelCandidate, apply_candidate, apply_vectors,
                        candidate_bounds, one_pixel_attack, true_class_mass)
from .outcome import (ATTACK_KINDS, DISPLAY_NAMES, AttackOutcome, load_outcomes, save_outcomes,
                      slot_success, write_outcome_csv)

__all__ = [
    "ATTACK_KINDS", "AttackOutcome", "DISPLAY_NAMES", "DeState", "FgsmParams", "OnePixelParams",
    "PixelCandidate", "apply_candidate", "apply_vectors", "attack_dataset", "candidate_bounds",
    "de_step", "differential_evolution", "draw_indices", "fgsm", "init_state", "input_gradient",
    "load_outcomes", "model_oracle", "one_pixel_attack", "sample_seed", "save_outcomes",
    "slot_success", "true_class_mass", "write_outcome_csv",
]
