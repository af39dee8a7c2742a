/* tslint:disable */
/* eslint-disable */

/**
 * `‖d_k‖` of the linearized iteration on a diagonal system with restricted
 * spectrum `etas` (each in `[−1, 1]`), started from the all-ones vector.
 */
export function linearized_trace(etas: Float64Array, a: number, b: number, steps: number): Float64Array;

/**
 * `ρ(M)` with `b = a` on `points` evenly spaced values of `a ∈ [0, 1]`.
 */
export function rate_curve(eta_bar: number, points: number): Float64Array;

/**
 * Row-major `points × points` codes over `(a, b) ∈ [0, 1]²`: 0 infeasible,
 * 1 feasible on the first branch, 2 feasible on the second.
 */
export function region_map(gamma_over_beta: number, tau: number, points: number): Uint8Array;

/**
 * `[ρ, oscillation period (NaN if none), a_opt, ρ_opt, converges]` at `(a, b)`.
 */
export function scalar_rates(eta_bar: number, a: number, b: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly linearized_trace: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly rate_curve: (a: number, b: number) => [number, number];
    readonly region_map: (a: number, b: number, c: number) => [number, number];
    readonly scalar_rates: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
