#pragma once

namespace epsseg {

/// Kernel execution mode. Every kernel has a serial reference path and an
/// OpenMP path; both perform per-element accumulations in the same order, so
/// results are bitwise identical regardless of mode or thread count.
enum class Exec { serial, parallel };

Exec default_exec();
void set_default_exec(Exec e);
void set_num_threads(int n);
int num_threads();

}  // namespace epsseg
