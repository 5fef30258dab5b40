#include "anyctl/vocab.hpp"

#include <array>
#include <fstream>

#include "anyctl/error.hpp"

namespace anyctl {

int32_t Vocabulary::char_token(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x20 || u > 0x7e)
        throw VocabError("character outside the vocabulary: code " +
                         std::to_string(static_cast<int>(u)));
    return kFirstChar + (u - 0x20);
}

std::string Vocabulary::token_text(int32_t id) {
    switch (id) {
        case kPad: return "<pad>";
        case kBos: return "<bos>";
        case kEos: return "<eos>";
    }
    if (id >= kFirstTask && id < kFirstChar)
        return std::string("<task:") +
               modality_name(static_cast<Modality>(id - kFirstTask)) + ">";
    if (id >= kFirstChar && id < kSize)
        return std::string(1, static_cast<char>(0x20 + id - kFirstChar));
    throw VocabError("token id out of range: " + std::to_string(id));
}

std::vector<int32_t> Vocabulary::tokenize(const std::string& prompt,
                                          const std::vector<Modality>& tasks,
                                          int64_t max_len) {
    std::array<bool, 3> wanted = {false, false, false};
    for (Modality m : tasks) wanted[static_cast<size_t>(m)] = true;
    int64_t task_count = 0;
    for (bool w : wanted) task_count += w;
    if (max_len < 2 + task_count)
        throw ContractError("max_len too small for task tokens alone");
    // Truncation may only ever shorten the free-text part.
    const int64_t prompt_budget = max_len - 2 - task_count;
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(max_len));
    out.push_back(kBos);
    for (size_t i = 0;
         i < prompt.size() && static_cast<int64_t>(i) < prompt_budget; ++i)
        out.push_back(char_token(prompt[i]));
    for (Modality m : kAllModalities)
        if (wanted[static_cast<size_t>(m)]) out.push_back(task_token(m));
    out.push_back(kEos);
    return out;
}

void Vocabulary::save(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (int32_t id = 0; id < kSize; ++id) out << token_text(id) << "\n";
    if (!out) throw IoError("short write to " + path);
}

void Vocabulary::check_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    for (int32_t id = 0; id < kSize; ++id) {
        if (!std::getline(in, line) || line != token_text(id))
            throw VocabError("vocabulary mismatch at line " +
                             std::to_string(id + 1) + " of " + path);
    }
    if (std::getline(in, line))
        throw VocabError("trailing entries in " + path);
}

}  // namespace anyctl
