"""
Refusal-Aware Video Temporal Grounding Toolkit Package
"""

# Optional imports - only import if modules are available
# This allows the package to work even if modules aren't in the path
try:
    from refusal_vtg import RefusalAwareToolkit
    from models import GroundingSample, Segment, DifficultyTier, Relevance
    from rewards import RewardEngine

    __all__ = [
        'RefusalAwareToolkit',
        'GroundingSample',
        'Segment',
        'DifficultyTier',
        'Relevance',
        'RewardEngine',
    ]
except ImportError:
    # If imports fail, define empty __all__ to prevent errors
    __all__ = []
