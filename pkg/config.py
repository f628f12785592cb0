import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str, default: int) -> int:
    return int(float(os.getenv(name, default)))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


class Config:
    """Base configuration class."""

    # Volume floor of split pieces, relative to the window
    EPS_VOL_REL = _env_float('EPS_VOL_REL', 1e-12)

    # Driving measure
    REJECTION_LIMIT = _env_int('REJECTION_LIMIT', 10 ** 6)
    DIRECTION_SAMPLER = os.getenv('DIRECTION_SAMPLER', 'rejection')

    # Split dynamics
    RESAMPLE_LIMIT = _env_int('RESAMPLE_LIMIT', 100)

    # Continuous shrink dynamics (jumps)
    CSD_BURN_IN = _env_int('CSD_BURN_IN', 10 ** 4)
    CSD_THIN = _env_int('CSD_THIN', 50)

    # Statistics
    VERTEX_MERGE_REL = _env_float('VERTEX_MERGE_REL', 1e-7)
    COLLINEAR_TOL = _env_float('COLLINEAR_TOL', 1e-6)
    CLEARANCE_FACTOR = _env_float('CLEARANCE_FACTOR', 3.0)

    # Replications
    WORKERS = _env_int('WORKERS', os.cpu_count() or 1)
    EXECUTOR = os.getenv('EXECUTOR', 'thread')

    LOG_LEVEL = os.getenv('LOG_LEVEL')


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    TESTING = False


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    TESTING = False


class TestingConfig(Config):
    """Testing configuration."""
    DEBUG = True
    TESTING = True
    WORKERS = 1
    CSD_BURN_IN = 500
    CSD_THIN = 5


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': ProductionConfig
}


def get_config():
    """Get configuration based on environment."""
    env = os.getenv('TESSELLATE_ENV', 'production')
    return config.get(env, config['default'])
