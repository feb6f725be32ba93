"""gridpack: example-packing for 2-D recurrent networks.

Modules:
- tensor_core: ImageGrid/MaskGrid and image readers
- skew_pack: input skewing, example packing, LMBR padding, balanced splitting
- mdlstm_cells: plain MDLSTM and Leaky LP scans, four-direction layers
- conv_ops: grouped and block-strided convolution, tensor-list chunking
- network: end-to-end forward pass and greedy CTC decoding
- model_io: binary parameter files with JSON sidecars
- bench: padding, capacity, throughput and stability benchmarks
- export / diagnostics: report writers, summaries and plots
- cli: the `gridpack` command
"""
