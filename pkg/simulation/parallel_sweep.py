import time
from concurrent.futures import ProcessPoolExecutor, as_completed

from routing_engine.config import RoutingConfig
from routing_engine.errors import RoutePilotError


def run_sweep_point(template, param, value, routing_config, seed):
    """
    Worker entry point: one (grid value, seed) run, start to finish in this process.

    Each run is single-threaded and shares nothing with other runs, so they
    can finish in any order without changing their results.
    """
    # Delayed import keeps worker start-up light.
    from simulation.sweep import run_point

    try:
        return {"success": True, "row": run_point(template, param, value, routing_config, seed)}
    except Exception as e:
        return {"success": False, "error": str(e), "value": value, "seed": seed}


def run_points_parallel(template: dict, param: str, tasks: list[tuple[float, int]],
                        routing_config: RoutingConfig | None, num_workers: int) -> list[dict]:
    """
    Dispatch (value, seed) runs to a process pool and return rows in task order.

    A failed run aborts the sweep; partial grids would break the common-random-number comparison.
    """
    print(f"\n[PARALLEL] Starting sweep with {num_workers} workers...")
    print(f"[PARALLEL] Queued {len(tasks)} runs.")

    rows = [None] * len(tasks)
    done = 0
    start_time = time.time()

    with ProcessPoolExecutor(max_workers=num_workers) as executor:
        futures = {
            executor.submit(run_sweep_point, template, param, value, routing_config, seed): index
            for index, (value, seed) in enumerate(tasks)
        }

        for future in as_completed(futures):
            index = futures[future]
            result = future.result()
            if not result.get("success"):
                value, seed = tasks[index]
                raise RoutePilotError(f"sweep point {param}={value} seed={seed} failed: {result.get('error')}")
            rows[index] = result["row"]
            done += 1

            elapsed = time.time() - start_time
            eta = elapsed / done * (len(tasks) - done)
            print(f"[PROGRESS] {done}/{len(tasks)} runs completed. ETA: {eta:.1f}s")

    total_time = time.time() - start_time
    print(f"\n[PARALLEL] Completed in {total_time:.1f}s (Average: {total_time / max(1, len(tasks)):.2f}s per run)")
    return rows
