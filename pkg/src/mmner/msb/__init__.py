from .model import (MsbConfig, MsbModel, import_pretrained, msb_tag, pretrained_name_map,
                    scaled_dot_product_attention)
from .tokenizer import (SPECIALS, SubwordVocab, Tokenized, assemble_input, detokenize,
                        tokenize, tokenize_words, wordpiece)

__all__ = ["MsbConfig", "MsbModel", "import_pretrained", "msb_tag", "pretrained_name_map",
           "scaled_dot_product_attention", "SPECIALS", "SubwordVocab", "Tokenized",
           "assemble_input", "detokenize", "tokenize", "tokenize_words", "wordpiece"]
