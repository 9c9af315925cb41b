/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_separation_free: (a: number, b: number) => void;
export const demo_frame_descent: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_nmf_trace: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_sample_rate: (a: number) => number;
export const demo_separate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const separation_audio1: (a: number) => [number, number];
export const separation_audio2: (a: number) => [number, number];
export const separation_mask1: (a: number) => [number, number];
export const separation_mixture: (a: number) => [number, number];
export const separation_mixture_db: (a: number) => [number, number];
export const separation_n_bins: (a: number) => number;
export const separation_n_frames: (a: number) => number;
export const separation_scores: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
