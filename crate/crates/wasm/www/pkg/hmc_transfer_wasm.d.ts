/* tslint:disable */
/* eslint-disable */

/**
 * Half-width of the position box used for `(a, b)`.
 */
export function box_halfwidth(a: number, b: number): number;

/**
 * Iterates a Gaussian bump at `center` under the operator.
 * Layout: `[q (n), f (n), h₀ (n), h₁ (n), …, h_steps (n)]` where `f` is
 * the target density normalized to unit mass.
 */
export function iterate_density(a: number, b: number, t: number, n: number, steps: number, center: number): Float64Array;

/**
 * Largest admissible integration time, `π/2 / √(Λ_U Λ_V)`.
 */
export function max_time(a: number, b: number): number;

/**
 * Leading `k` eigenvalues of the discretized operator at each of `times`.
 * Layout: row-major `times.len() × k`; times outside the regime give NaN.
 */
export function spectrum_sweep(a: number, b: number, times: Float64Array, n: number, k: number): Float64Array;

/**
 * Phase trajectory from `(q0, p0)` over total time `t` in `points` segments.
 * Layout: `points + 1` rows of `[s, q, p, H]`.
 */
export function trajectory(a: number, b: number, q0: number, p0: number, t: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly box_halfwidth: (a: number, b: number) => number;
    readonly iterate_density: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly max_time: (a: number, b: number) => [number, number, number];
    readonly spectrum_sweep: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly trajectory: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
