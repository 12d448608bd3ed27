"""
Structured logging and Prometheus stream metrics.
Структурное логирование и метрики потока Prometheus.
"""
