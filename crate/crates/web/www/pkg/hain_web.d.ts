/* tslint:disable */
/* eslint-disable */

export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Attributes one held-out row to its features with the named method:
     * `grad_attention`, `gradient`, `shapley_exact` or `shapley_sampled`.
     */
    explain(row: number, method: string): string;
    n_features(): number;
    n_test(): number;
    /**
     * Draws and standardizes a benchmark, holding out a quarter of it.
     */
    constructor(samples: number, features: number, classes: number, informative: number, separation: number, seed: bigint);
    /**
     * Trains from scratch and reports the log, test accuracy and ranking.
     */
    train(epochs: number, learning_rate: number, group_size: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly playground_explain: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly playground_n_features: (a: number) => number;
    readonly playground_n_test: (a: number) => number;
    readonly playground_new: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly playground_train: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
