// Generates a synthetic grade-school style text corpus (raw bytes) and three
// task suites in byte token ids: capitalization, gender and winograd-style
// pronoun resolution. Everything is a pure function of the seed.

#include <CLI11.hpp>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace {

const std::vector<std::string> kFemale{"Anna", "Lily", "Emma", "Mia", "Sara", "Nora", "Ruth", "Jane",
                                       "Kate", "Rose", "Lucy", "Ella", "Ivy", "Zoe", "Amy", "Beth"};
const std::vector<std::string> kMale{"Tom", "Sam", "Jack", "Ben", "Max", "Leo", "Paul", "Mark",
                                     "John", "Nick", "Carl", "Dan", "Owen", "Finn", "Hugo", "Ray"};
const std::vector<std::string> kObjects{"ball", "book", "kite", "cup", "hat", "box", "pen", "bike",
                                        "drum", "coat", "bag", "doll", "boat", "cake", "map", "lamp"};
const std::vector<std::string> kAdjectives{"red", "big", "small", "blue", "new", "old", "green", "soft",
                                           "round", "tall", "yellow", "clean"};
const std::vector<std::string> kPlaces{"park", "school", "shop", "lake", "farm", "library", "garden", "beach"};
const std::vector<std::string> kActs{"read", "play", "swim", "draw", "sing", "run", "paint", "rest"};

struct Person {
    std::string name;
    bool female;
    std::string subj() const { return female ? "she" : "he"; }
    std::string obj() const { return female ? "her" : "him"; }
    std::string poss() const { return female ? "her" : "his"; }
};

std::string cap(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

class Generator {
   public:
    explicit Generator(std::uint64_t seed) : rng_(seed) {}

    template <class C>
    const auto& pick(const C& c) {
        return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng_)];
    }

    Person person() {
        const bool f = coin();
        return {f ? pick(kFemale) : pick(kMale), f};
    }

    Person other(const Person& a, bool opposite_gender) {
        for (;;) {
            const bool f = opposite_gender ? !a.female : coin();
            Person b{f ? pick(kFemale) : pick(kMale), f};
            if (b.name != a.name) return b;
        }
    }

    bool coin() { return std::uniform_int_distribution<int>(0, 1)(rng_) == 1; }

    std::string sentence(const Person& a, const Person& b) {
        switch (std::uniform_int_distribution<int>(0, 9)(rng_)) {
            case 0: return a.name + " has a " + pick(kAdjectives) + " " + pick(kObjects) + ".";
            case 1: return a.name + " went to the " + pick(kPlaces) + " because " + a.subj() + " wanted to " + pick(kActs) + ".";
            case 2: return a.name + " thanked " + b.name + " because " + b.subj() + " helped " + a.obj() + ".";
            case 3: return a.name + " apologized to " + b.name + " because " + a.subj() + " was rude.";
            case 4: return a.name + " likes to " + pick(kActs) + ". " + cap(a.subj()) + " does it every day.";
            case 5: return "The " + pick(kObjects) + " is " + pick(kAdjectives) + ".";
            case 6: return a.name + " gave " + b.name + " a " + pick(kObjects) + ". " + cap(b.subj()) + " said thank you.";
            case 7: return a.name + " and " + b.name + " went to the " + pick(kPlaces) + " together.";
            case 8: return a.name + " lost " + a.poss() + " " + pick(kObjects) + ", so " + b.name + " helped " + a.obj() + " find it.";
            default: return a.name + " is happy because " + a.subj() + " can " + pick(kActs) + ".";
        }
    }

    std::string paragraph() {
        const Person a = person();
        const Person b = other(a, false);
        std::string p;
        const int n = std::uniform_int_distribution<int>(3, 6)(rng_);
        for (int i = 0; i < n; ++i) {
            if (i) p += ' ';
            p += coin() ? sentence(a, b) : sentence(b, a);
        }
        return p + "\n";
    }

   private:
    std::mt19937_64 rng_;
};

std::string ids_of(const std::string& text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(static_cast<unsigned char>(text[i]));
    }
    return out;
}

void write_case(std::ostream& out, const std::string& task, const std::string& context, char correct, char incorrect) {
    out << task << '\t' << ids_of(context) << '\t' << static_cast<int>(static_cast<unsigned char>(correct)) << '\t'
        << static_cast<int>(static_cast<unsigned char>(incorrect)) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic corpus and task-suite generator"};
    std::string out_dir;
    std::size_t bytes = 3'000'000;
    std::uint64_t seed = 1;
    std::size_t cases = 24;
    app.add_option("--out", out_dir, "Output directory")->required();
    app.add_option("--bytes", bytes, "Approximate corpus size in bytes");
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--cases", cases, "Cases per suite");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        std::filesystem::create_directories(out_dir);
        Generator gen(seed);
        {
            std::ofstream corpus(out_dir + "/corpus.txt", std::ios::binary);
            std::size_t written = 0;
            while (written < bytes) {
                const auto p = gen.paragraph();
                corpus << p;
                written += p.size();
            }
        }
        Generator cg(seed ^ 0x5eedULL);
        std::ofstream cap_out(out_dir + "/capitalization.tsv"), gen_out(out_dir + "/gender.tsv"),
            win_out(out_dir + "/winograd.tsv");
        for (std::size_t i = 0; i < cases; ++i) {
            const Person a = cg.person();
            const std::string ctx = a.name + " has a " + cg.pick(kAdjectives) + " " + cg.pick(kObjects) + ". ";
            write_case(cap_out, "capitalization", ctx, a.name[0],
                       static_cast<char>(std::tolower(static_cast<unsigned char>(a.name[0]))));

            const Person g = cg.person();
            write_case(gen_out, "gender", g.name + " went to the " + cg.pick(kPlaces) + " because ", g.subj()[0],
                       g.female ? 'h' : 's');

            const Person x = cg.person();
            const Person y = cg.other(x, true);
            if (i % 2 == 0) {
                write_case(win_out, "winograd", x.name + " thanked " + y.name + " because ", y.subj()[0], x.subj()[0]);
            } else {
                write_case(win_out, "winograd", x.name + " apologized to " + y.name + " because ", x.subj()[0],
                           y.subj()[0]);
            }
        }
        std::cout << "wrote corpus and suites to " << out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
