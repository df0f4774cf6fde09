"""Dictionary-compressed column store with a write-optimized delta and a
linear-time, multi-threaded delta merge."""
from .codec import (BitPackedVector, CodecError, SortedDictionary, compressed_width,
                    decode_uint, dict_find, dict_value, encode_uint, pack, unpack_at)
from .cost_model import (REFERENCE_PLATFORM, MachineParams, WorkloadParams, aux_fits_cache,
                         predict_cpt, traffic_step1a, traffic_step1b, traffic_step2,
                         update_rate)
from .delta_index import DuplicateTupleId, OrderedValueIndex, index_insert, index_traverse
from .merge import (DictMergeResult, MergeError, build_delta_dictionary, merge_column,
                    merge_column_naive, merge_column_optimized, merge_dictionaries,
                    new_code_width, rewrite_values_optimized)
from .parallel import (MergeRange, parallel_merge_dictionaries, parallel_merge_table,
                       parallel_rewrite_values, partition_ranges, prefix_sum,
                       prefix_sum_parallel)
from .store import (DeltaPartition, MainPartition, StoreError, Table, TableSchema,
                    commit_merge, freeze_and_swap, get_value, insert_row,
                    merge_trigger_due, scan_eq)

__version__ = "0.1.0"
