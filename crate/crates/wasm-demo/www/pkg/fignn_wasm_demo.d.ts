/* tslint:disable */
/* eslint-disable */

/**
 * A training session kept alive between calls from the page.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Mean Fi-GNN edge attention and node weights over the validation set.
     */
    attention_map(): string;
    cardinality(): number;
    epoch(): number;
    fields(): number;
    /**
     * Generates the data and initialises both models.
     */
    constructor(seed: number, instances: number, noise: number, steps: number, learning_rate: number);
    /**
     * Scores one hand-built instance given as comma-separated value indices,
     * one per field (e.g. "0,3,7,1").
     */
    score_case(values: string): string;
    /**
     * Runs one epoch for both models; returns the curves point as JSON.
     */
    train_epoch(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly session_attention_map: (a: number) => [number, number, number, number];
    readonly session_cardinality: (a: number) => number;
    readonly session_epoch: (a: number) => number;
    readonly session_fields: (a: number) => number;
    readonly session_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly session_score_case: (a: number, b: number, c: number) => [number, number, number, number];
    readonly session_train_epoch: (a: number) => [number, number, number, number];
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
