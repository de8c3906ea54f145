/* tslint:disable */
/* eslint-disable */

/**
 * `[axial, full]` attention-core multiply-accumulates on a `side×side` map.
 */
export function attention_cost(side: number, channels: number, heads: number): Float64Array;

/**
 * `p ⊛ q` as `[r, i, j, k]`.
 */
export function hamilton(p: Float64Array, q: Float64Array): Float64Array;

/**
 * The 4×4 real matrix of left multiplication by `w`, row-major.
 */
export function hamilton_matrix_of(w: Float64Array): Float64Array;

/**
 * One text line per stem, block and head, then layer and parameter totals.
 */
export function model_summary(variant: string, depth: number, quat_layers: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attention_cost: (a: number, b: number, c: number) => [number, number, number, number];
    readonly hamilton: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly hamilton_matrix_of: (a: number, b: number) => [number, number, number, number];
    readonly model_summary: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
