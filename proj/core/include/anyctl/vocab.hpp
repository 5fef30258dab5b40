#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyctl/modality.hpp"

namespace anyctl {

// Character-level vocabulary: PAD/BOS/EOS, one reserved task token per
// modality, then the 95 printable ASCII characters. Ids are fixed by
// construction and never depend on input data.
class Vocabulary {
  public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kBos = 1;
    static constexpr int32_t kEos = 2;
    static constexpr int32_t kFirstTask = 3;  // one per modality, canon order
    static constexpr int32_t kFirstChar = 6;  // ' ' .. '~'
    static constexpr int32_t kSize = 6 + 95;

    static int32_t task_token(Modality m) {
        return kFirstTask + static_cast<int32_t>(m);
    }

    // Character id; throws VocabError outside printable ASCII.
    static int32_t char_token(char c);

    // Human-readable spelling of one token, used for the one-per-line dump.
    static std::string token_text(int32_t id);

    // BOS ++ prompt chars ++ deduped task tokens in canonical modality order
    // ++ EOS, truncated to max_len by dropping prompt tail characters only.
    static std::vector<int32_t> tokenize(const std::string& prompt,
                                         const std::vector<Modality>& tasks,
                                         int64_t max_len);

    static void save(const std::string& path);
    // Verifies a dump matches this vocabulary; throws VocabError if not.
    static void check_file(const std::string& path);
};

}  // namespace anyctl
