from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="TLBD_",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    # Paths
    output_root: str = "./runs"
    mnist_dir: Optional[str] = None

    # Reference experiment settings
    default_num_queries: int = 5000
    default_inference_rate: float = 0.001
    default_train_dropout_rate: float = 0.5
    default_target_neurons: int = 1

    # Desk-scale training
    desk_epochs: int = 10
    desk_batch_size: int = 64
    desk_learning_rate: float = 0.1
    desk_mnist_subset: int = 10000

    # Adversary
    search_horizon: int = 1_000_000

    # Monte-Carlo
    monte_carlo_chunk: int = 1_000_000


settings = Settings()
