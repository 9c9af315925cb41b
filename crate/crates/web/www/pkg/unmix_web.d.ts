/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    frame_descent(smr_db: number, frame: number): Float64Array;
    /**
     * Trains the demo models; takes a few seconds.
     */
    constructor(seed: number);
    nmf_trace(rank: number, iters: number): Float64Array;
    sample_rate(): number;
    separate(smr_db: number, lambda: number, beta: number, nmf_only: boolean): Separation;
}

export class Separation {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    audio1(): Float32Array;
    audio2(): Float32Array;
    mask1(): Float64Array;
    mixture(): Float32Array;
    mixture_db(): Float64Array;
    n_bins(): number;
    n_frames(): number;
    /**
     * `[sdr, sir, snr]` of the source-one estimate in dB.
     */
    scores(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_separation_free: (a: number, b: number) => void;
    readonly demo_frame_descent: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_nmf_trace: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_sample_rate: (a: number) => number;
    readonly demo_separate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly separation_audio1: (a: number) => [number, number];
    readonly separation_audio2: (a: number) => [number, number];
    readonly separation_mask1: (a: number) => [number, number];
    readonly separation_mixture: (a: number) => [number, number];
    readonly separation_mixture_db: (a: number) => [number, number];
    readonly separation_n_bins: (a: number) => number;
    readonly separation_n_frames: (a: number) => number;
    readonly separation_scores: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
