"""midsmith: orchestration engine and evaluation harness for multi-turn
text+image dialogue systems.

Subpackages map to the system's pieces: domain model and JSONL dataset
format (`model`), the draw-token / verdict grammar and prompt assembly
(`protocol`), model-backend clients and hermetic mocks (`backends`),
the live session engine (`engine`), offline data pipelines (`forge`),
the benchmark metrics (`evalbench`), and the HTTP gateway + CLI
(`gateway`, `cli`).
"""

__version__ = "0.1.0"
