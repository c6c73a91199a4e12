import os
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base

DEFAULT_DATABASE_URL = "sqlite:///./calibadv_runs.db"
DATABASE_URL_ENV = "CALIBADV_DB_URL"

Base = declarative_base()


def database_url(url: Optional[str] = None) -> str:
    return url or os.environ.get(DATABASE_URL_ENV) or DEFAULT_DATABASE_URL


def make_session_factory(url: Optional[str] = None) -> sessionmaker:
    """Engine + session factory for the run ledger; tables are created on first use."""
    from . import models  # noqa: F401  registers the tables on Base

    url = database_url(url)
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args)
    Base.metadata.create_all(engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
