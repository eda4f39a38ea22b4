// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace cpvq {

/// Keeps large tensor buffers on the heap instead of mmap'ing them per
/// allocation. Training allocates and frees megabyte buffers every step and
/// otherwise spends most of its time in page faults. Call once from main.
void configure_allocator();

}  // namespace cpvq
