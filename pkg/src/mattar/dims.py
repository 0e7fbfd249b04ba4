"""Network width constants shared across the policy and forward-model stacks."""

TASK_REPR_DIM = 32
ENTITY_EMBED_DIM = 64
ATTN_EMBED_DIM = 8
MIXING_EMBED_DIM = 32
HYPERNET_EMBED = 64
STATE_LATENT_DIM = 32
