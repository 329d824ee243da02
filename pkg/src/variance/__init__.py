from variance.grad_variance import (
    GroupedGradients, PhiEstimate, cosine_similarity, full_variance_estimate, groups_from_halves, phi_estimate,
    split_groups,
)
from variance.oracle import brute_force_variance_oracle, compare_with_oracle
