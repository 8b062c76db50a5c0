def poly_lr(iteration, lr0, max_iters, power=0.9):
    """Poly decay: lr0 * (1 - iteration / max_iters) ** power."""
    if not 0 <= iteration <= max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {max_iters}]")
    return lr0 * (1.0 - iteration / max_iters) ** power


def set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr
