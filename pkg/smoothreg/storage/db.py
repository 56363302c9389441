"""SQLite result store for smoothreg: async via aiosqlite."""
import json
import logging
from typing import List, Optional, Set

import aiosqlite

from smoothreg.harness.rows import ResultRow

logger = logging.getLogger(__name__)


class ResultStore:
    """Grid-cell results and run manifests, keyed by config hash."""

    def __init__(self, db_path: str = "smoothreg.db"):
        self.db_path = db_path
        self._conn: Optional[aiosqlite.Connection] = None

    async def _get_conn(self) -> aiosqlite.Connection:
        if self._conn is None:
            self._conn = await aiosqlite.connect(self.db_path)
            self._conn.row_factory = aiosqlite.Row
        return self._conn

    async def initialize(self):
        conn = await self._get_conn()
        await conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                master_seed INTEGER NOT NULL,
                manifest TEXT NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            );

            CREATE TABLE IF NOT EXISTS results (
                config_hash TEXT NOT NULL,
                learner TEXT NOT NULL,
                dim INTEGER NOT NULL,
                noise_type TEXT NOT NULL,
                regularizer TEXT NOT NULL,
                n INTEGER NOT NULL,
                sigma REAL NOT NULL,
                seed INTEGER NOT NULL,
                test_l2 REAL NOT NULL,
                val_l2 REAL NOT NULL,
                t_used INTEGER NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                UNIQUE(config_hash, learner, dim, noise_type, regularizer, n, sigma, seed)
            );

            CREATE INDEX IF NOT EXISTS idx_results_hash ON results(config_hash);
            CREATE INDEX IF NOT EXISTS idx_runs_hash ON runs(config_hash);
        """)
        await conn.commit()
        logger.info(f"Result store initialized at {self.db_path}")

    # --- Results ---

    async def store_result(self, config_hash: str, row: ResultRow) -> bool:
        """Insert one grid-cell row; False if the cell is already stored."""
        conn = await self._get_conn()
        try:
            await conn.execute("""
                INSERT INTO results
                (config_hash, learner, dim, noise_type, regularizer, n, sigma, seed, test_l2, val_l2, t_used)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (config_hash, row.learner, row.dim, row.noise_type, row.regularizer, row.n,
                  row.sigma, row.seed, row.test_l2, row.val_l2, row.t_used))
            await conn.commit()
            return True
        except aiosqlite.IntegrityError:
            return False

    async def completed_keys(self, config_hash: str) -> Set[tuple]:
        conn = await self._get_conn()
        cursor = await conn.execute(
            "SELECT learner, dim, noise_type, regularizer, n, sigma, seed FROM results WHERE config_hash = ?",
            (config_hash,)
        )
        return {tuple(row) for row in await cursor.fetchall()}

    async def get_results(self, config_hash: str) -> List[ResultRow]:
        conn = await self._get_conn()
        cursor = await conn.execute("""
            SELECT learner, dim, noise_type, regularizer, n, sigma, seed, test_l2, val_l2, t_used
            FROM results WHERE config_hash = ?
            ORDER BY learner, dim, noise_type, regularizer, n, sigma, seed
        """, (config_hash,))
        return [ResultRow(**dict(row)) for row in await cursor.fetchall()]

    async def count_results(self, config_hash: Optional[str] = None) -> int:
        conn = await self._get_conn()
        if config_hash is None:
            cursor = await conn.execute("SELECT COUNT(*) FROM results")
        else:
            cursor = await conn.execute("SELECT COUNT(*) FROM results WHERE config_hash = ?", (config_hash,))
        row = await cursor.fetchone()
        return row[0]

    async def clear_results(self, config_hash: str) -> int:
        conn = await self._get_conn()
        cursor = await conn.execute("DELETE FROM results WHERE config_hash = ?", (config_hash,))
        await conn.commit()
        return cursor.rowcount

    # --- Runs ---

    async def record_run(self, command: str, config_hash: str, master_seed: int, manifest: dict) -> int:
        conn = await self._get_conn()
        cursor = await conn.execute(
            "INSERT INTO runs (command, config_hash, master_seed, manifest) VALUES (?, ?, ?, ?)",
            (command, config_hash, master_seed, json.dumps(manifest, sort_keys=True))
        )
        await conn.commit()
        return cursor.lastrowid

    async def get_runs(self, limit: int = 20) -> List[dict]:
        conn = await self._get_conn()
        cursor = await conn.execute(
            "SELECT id, command, config_hash, master_seed, manifest, created_at FROM runs "
            "ORDER BY id DESC LIMIT ?", (limit,)
        )
        runs = []
        for row in await cursor.fetchall():
            run = dict(row)
            run["manifest"] = json.loads(run["manifest"])
            runs.append(run)
        return runs

    async def close(self):
        if self._conn:
            await self._conn.close()
            self._conn = None
